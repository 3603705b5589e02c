"""Model problems: data, exact solutions and boundary partitions.

All problems are written as the first-order system ``sigma = eps grad u``,
``beta . grad u - div sigma = f``.  Poisson problems use ``eps = 1`` and
``beta = 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh


@dataclass
class ProblemSpec:
    name: str
    source: Callable
    is_dirichlet: Callable
    u_dirichlet: Callable
    flux_neumann: Callable
    roots: list
    origin: tuple = (0.0, 0.0, 0.0)
    cell: float = 1.0
    eps: float = 1.0
    eps_d: float = 1.0
    beta: tuple = (0.0, 0.0, 0.0)
    exact: Callable | None = None
    exact_grad: Callable | None = None
    initial_order: tuple = (2, 2, 2)
    initial_split: int = 1
    info: dict = field(default_factory=dict)

    def sigma_exact(self, X):
        return self.eps_d * self.exact_grad(X)

    def initial_mesh(self, p_max: int = 6) -> Mesh:
        n = self.initial_split
        roots = [(n * i + a, n * j + b, n * k + c) for (i, j, k) in self.roots
                 for c in range(n) for b in range(n) for a in range(n)]
        roots.sort(key=lambda r: (r[2], r[1], r[0]))
        origin = np.asarray(self.origin, dtype=float)
        return Mesh(roots, order=self.initial_order, origin=origin,
                    cell=self.cell / n, p_max=p_max)


UNIT_CUBE = [(0, 0, 0)]


def _low_planes_dirichlet(d, normal, x):
    """Dirichlet on the planes ``x_d = 0`` of the unit cube, Neumann elsewhere."""
    return normal < 0


def _flux_from_grad(eps, grad):
    def flux(X, normal):
        return eps * (grad(X) @ np.asarray(normal, dtype=float))
    return flux


# {{{ boundary layer

def _layer_factor(eps):
    if eps <= 0:
        raise ValueError("eps must be positive")
    D = -math.expm1(-1.0 / eps)
    e1 = math.exp(-1.0 / eps)

    def phi(x):
        return x - (np.exp((x - 1.0) / eps) - e1) / D

    def dphi(x):
        return 1.0 - np.exp((x - 1.0) / eps) / (eps * D)

    def d2phi(x):
        return -np.exp((x - 1.0) / eps) / (eps * eps * D)

    return phi, dphi, d2phi


def boundary_layer_problem(eps: float = 0.05) -> ProblemSpec:
    """Poisson problem with layers at ``x, y, z = 1`` of width ``eps``."""
    phi, dphi, d2phi = _layer_factor(eps)
    if eps < 1e-4:
        warnings.warn("layer width is below practical quadrature resolution", RuntimeWarning)

    def exact(X):
        X = np.asarray(X, dtype=float)
        return phi(X[:, 0]) * phi(X[:, 1]) * phi(X[:, 2])

    def grad(X):
        X = np.asarray(X, dtype=float)
        p = [phi(X[:, k]) for k in range(3)]
        dp = [dphi(X[:, k]) for k in range(3)]
        return np.stack([dp[0] * p[1] * p[2], p[0] * dp[1] * p[2], p[0] * p[1] * dp[2]], axis=1)

    def source(X):
        X = np.asarray(X, dtype=float)
        p = [phi(X[:, k]) for k in range(3)]
        q = [d2phi(X[:, k]) for k in range(3)]
        return -(q[0] * p[1] * p[2] + p[0] * q[1] * p[2] + p[0] * p[1] * q[2])

    return ProblemSpec("boundary_layer", source, _low_planes_dirichlet, exact,
                       _flux_from_grad(1.0, grad), UNIT_CUBE, eps=eps, exact=exact,
                       exact_grad=grad, initial_order=(2, 2, 2), initial_split=2)

# }}}


# {{{ Fichera corner

def lshape_literal(eta, xi):
    """``r^(2/3) cos(theta)`` with ``theta = arctan(xi / eta)``; equals ``|eta| r^(-1/3)``."""
    r = np.hypot(eta, xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(eta) * r ** (-1.0 / 3.0)
    return np.where(r > 0, out, 0.0)


def lshape_literal_grad(eta, xi):
    r2 = eta * eta + xi * xi
    with np.errstate(divide="ignore", invalid="ignore"):
        r13 = r2 ** (-1.0 / 6.0)
        r73 = r2 ** (-7.0 / 6.0)
        de = np.sign(eta) * r13 - np.abs(eta) * eta * r73 / 3.0
        dx = -np.abs(eta) * xi * r73 / 3.0
    return np.where(r2 > 0, de, 0.0), np.where(r2 > 0, dx, 0.0)


def lshape_standard(eta, xi):
    """``r^(2/3) sin(2/3 (phi - pi/2))`` with ``phi`` in ``[pi/2, 2 pi]``."""
    r = np.hypot(eta, xi)
    ph = np.mod(np.arctan2(xi, eta), 2 * np.pi)
    return r ** (2.0 / 3.0) * np.sin(2.0 / 3.0 * (ph - np.pi / 2))


def lshape_standard_grad(eta, xi):
    r2 = eta * eta + xi * xi
    ph = np.mod(np.arctan2(xi, eta), 2 * np.pi)
    a = 2.0 / 3.0 * (ph - np.pi / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(r2)
        ur = (2.0 / 3.0) * r ** (-1.0 / 3.0) * np.sin(a)
        ut = (2.0 / 3.0) * r ** (-1.0 / 3.0) * np.cos(a)
        c, s = eta / r, xi / r
        de = ur * c - ut * s
        dx = ur * s + ut * c
    return np.where(r2 > 0, de, 0.0), np.where(r2 > 0, dx, 0.0)


_PLANES = ((0, 1), (1, 2), (0, 2))


def fichera_problem(variant: str = "literal") -> ProblemSpec:
    """Laplace problem on ``(-1, 1)^3`` minus ``[0, 1]^3`` driven by Neumann data."""
    if variant == "literal":
        fun, gfun = lshape_literal, lshape_literal_grad
    elif variant == "standard":
        fun, gfun = lshape_standard, lshape_standard_grad
    else:
        raise ValueError(f"unknown Fichera variant {variant!r}")

    def grad(X):
        X = np.asarray(X, dtype=float)
        g = np.zeros_like(X)
        for (e, x) in _PLANES:
            de, dx = gfun(X[:, e], X[:, x])
            g[:, e] += de
            g[:, x] += dx
        return g

    def harmonic_sum(X):
        X = np.asarray(X, dtype=float)
        return sum(fun(X[:, e], X[:, x]) for (e, x) in _PLANES)

    def is_dirichlet(d, normal, x):
        # the three square faces of the removed octant
        others = [k for k in range(3) if k != d]
        return abs(x[d]) < 1e-12 and all(x[k] > 0 for k in others)

    roots = [(i, j, k) for k in range(2) for j in range(2) for i in range(2)
             if (i, j, k) != (1, 1, 1)]
    spec = ProblemSpec("fichera", None, is_dirichlet, lambda X: np.zeros(len(X)),
                       _flux_from_grad(1.0, grad), roots, origin=(-1.0, -1.0, -1.0),
                       initial_order=(2, 2, 2))
    spec.info["variant"] = variant
    spec.info["neumann_potential"] = harmonic_sum
    return spec

# }}}


# {{{ Eriksson-Johnson

def eriksson_johnson_problem(eps: float = 0.1) -> ProblemSpec:
    """Convection-diffusion ``u_x - eps lap u = f`` with an outflow layer at ``x = 1``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    root = math.sqrt(1.0 + 4.0 * math.pi ** 2 * eps ** 2)
    s1 = (1.0 + root) / (2.0 * eps)
    s2 = (1.0 - root) / (2.0 * eps)
    den = math.exp(-s1) - math.exp(-s2)
    pi = math.pi

    def X(x):
        return (np.exp(s1 * (x - 1.0)) - np.exp(s2 * (x - 1.0))) / den

    def dX(x):
        return (s1 * np.exp(s1 * (x - 1.0)) - s2 * np.exp(s2 * (x - 1.0))) / den

    def d2X(x):
        return (s1 * s1 * np.exp(s1 * (x - 1.0)) - s2 * s2 * np.exp(s2 * (x - 1.0))) / den

    def exact(P):
        P = np.asarray(P, dtype=float)
        return X(P[:, 0]) * np.sin(pi * P[:, 1]) * np.sin(pi * P[:, 2])

    def grad(P):
        P = np.asarray(P, dtype=float)
        sy, sz = np.sin(pi * P[:, 1]), np.sin(pi * P[:, 2])
        cy, cz = np.cos(pi * P[:, 1]), np.cos(pi * P[:, 2])
        x = X(P[:, 0])
        return np.stack([dX(P[:, 0]) * sy * sz, pi * x * cy * sz, pi * x * sy * cz], axis=1)

    def source(P):
        P = np.asarray(P, dtype=float)
        s = np.sin(pi * P[:, 1]) * np.sin(pi * P[:, 2])
        x = P[:, 0]
        return (dX(x) - eps * d2X(x) + 2.0 * pi * pi * eps * X(x)) * s

    spec = ProblemSpec("eriksson_johnson", source, lambda d, n, x: True, exact,
                       _flux_from_grad(eps, grad), UNIT_CUBE, eps=eps, eps_d=eps,
                       beta=(1.0, 0.0, 0.0), exact=exact, exact_grad=grad,
                       initial_order=(2, 2, 2), initial_split=2)
    spec.info.update(s1=s1, s2=s2)
    return spec

# }}}


# {{{ polynomial sanity

def polynomial_sanity_problem(degree: int = 2, coeffs=None, p_max: int = 6) -> ProblemSpec:
    """Poisson problem whose exact solution is a polynomial of total degree ``degree``.

    The default solution is ``x^d + y^d + z^d`` (the constant 1 for
    ``d = 0``).  ``coeffs`` maps exponent triples to coefficients instead.
    The initial mesh is the unit cube at order ``degree + 1`` (capped at
    ``p_max``), so for ``degree < p_max`` the exact solution lies in the
    discrete space.
    """
    degree = int(degree)
    if degree < 0 or degree > p_max:
        raise ValueError(f"degree must lie in [0, {p_max}]")
    if coeffs is None:
        if degree == 0:
            coeffs = {(0, 0, 0): 1.0}
        else:
            coeffs = {(degree, 0, 0): 1.0, (0, degree, 0): 1.0, (0, 0, degree): 1.0}
    coeffs = {tuple(int(e) for e in k): float(v) for k, v in coeffs.items()}
    if any(sum(k) > degree for k in coeffs):
        raise ValueError("monomial exceeds the stated degree")

    def mono(X, k, dk=(0, 0, 0)):
        out = np.ones(len(X))
        for a in range(3):
            e, m = k[a], dk[a]
            if m > e:
                return np.zeros(len(X))
            c = math.perm(e, m)
            out = out * c * X[:, a] ** (e - m)
        return out

    def exact(X):
        X = np.asarray(X, dtype=float)
        return sum(c * mono(X, k) for k, c in coeffs.items())

    def grad(X):
        X = np.asarray(X, dtype=float)
        cols = []
        for a in range(3):
            dk = tuple(1 if b == a else 0 for b in range(3))
            cols.append(sum(c * mono(X, k, dk) for k, c in coeffs.items()))
        return np.stack(cols, axis=1)

    def source(X):
        X = np.asarray(X, dtype=float)
        lap = np.zeros(len(X))
        for a in range(3):
            dk = tuple(2 if b == a else 0 for b in range(3))
            lap = lap + sum(c * mono(X, k, dk) for k, c in coeffs.items())
        return -lap

    p = min(degree + 1, p_max)
    spec = ProblemSpec("poly_sanity", source, _low_planes_dirichlet, exact,
                       _flux_from_grad(1.0, grad), UNIT_CUBE, exact=exact, exact_grad=grad,
                       initial_order=(p, p, p))
    spec.info["coeffs"] = coeffs
    return spec

# }}}


PROBLEMS = {
    "boundary_layer": boundary_layer_problem,
    "fichera": fichera_problem,
    "eriksson_johnson": eriksson_johnson_problem,
    "poly_sanity": polynomial_sanity_problem,
}


def make_problem(name: str, eps=None, degree=None, variant=None, p_max: int = 6) -> ProblemSpec:
    if name not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}")
    if name == "boundary_layer":
        return boundary_layer_problem(0.05 if eps is None else eps)
    if name == "eriksson_johnson":
        return eriksson_johnson_problem(0.1 if eps is None else eps)
    if name == "fichera":
        return fichera_problem(variant or "literal")
    return polynomial_sanity_problem(2 if degree is None else degree, p_max=p_max)
