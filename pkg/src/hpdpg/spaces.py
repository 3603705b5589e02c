"""Tensor-product polynomial bases, quadrature and element L2 spaces.

All reference computations live on the unit interval / unit cube.  The
``LEGENDRE_L2`` family is the shifted Legendre basis ``P_n(2s - 1)``
(orthogonal, ``int_0^1 P_n^2 = 1/(2n+1)``); the ``LOBATTO_H1`` family is
the hierarchical basis ``1 - s, s, l_2, l_3, ...`` whose bubbles are
integrated Legendre polynomials vanishing at both ends.

Element orders ``(px, py, pz)`` follow the exact-sequence convention: the
L2 fields of an element of order ``p`` are polynomials of degree ``p - 1``
per direction, so ``px * py * pz`` functions per scalar field.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


FIELD_COMPONENTS = ("u", "sx", "sy", "sz")


class BasisKind(enum.Enum):
    LEGENDRE_L2 = "legendre"
    LOBATTO_H1 = "lobatto"


# {{{ 1D families

def legendre(n: int, s: np.ndarray, deriv: bool = False):
    """Shifted Legendre polynomials ``P_0..P_n`` on [0, 1] at points ``s``.

    Returns an ``(n + 1, len(s))`` array, plus the derivative table in
    ``s`` when ``deriv`` is set.
    """
    s = np.asarray(s, dtype=float)
    x = 2.0 * s - 1.0
    P = np.empty((n + 1,) + x.shape)
    P[0] = 1.0
    if n >= 1:
        P[1] = x
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * x * P[k] - k * P[k - 1]) / (k + 1)
    if not deriv:
        return P
    dP = np.zeros_like(P)
    # P'_{k+1} = P'_{k-1} + (2k + 1) P_k, in x; chain rule gives factor 2
    if n >= 1:
        dP[1] = 1.0
    for k in range(1, n):
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
    return P, 2.0 * dP


def lobatto(n: int, s: np.ndarray, deriv: bool = False):
    """Hierarchical H1 basis of order ``n`` (``n + 1`` functions) on [0, 1]."""
    s = np.asarray(s, dtype=float)
    L = np.empty((n + 1,) + s.shape)
    L[0] = 1.0 - s
    if n >= 1:
        L[1] = s
    dL = np.empty_like(L) if deriv else None
    if deriv:
        dL[0] = -1.0
        if n >= 1:
            dL[1] = 1.0
    if n >= 2:
        P = legendre(n, s)
        for k in range(2, n + 1):
            # l_k = (P_k - P_{k-2}) / sqrt(2 (2k - 1)) in x = 2s - 1
            c = 1.0 / np.sqrt(2.0 * (2 * k - 1))
            L[k] = c * (P[k] - P[k - 2])
            if deriv:
                # d/dx (P_k - P_{k-2}) = (2k - 1) P_{k-1}
                dL[k] = 2.0 * c * (2 * k - 1) * P[k - 1]
    if deriv:
        return L, dL
    return L


@dataclass(frozen=True)
class TensorBasis1D:
    order: int
    kind: BasisKind = BasisKind.LEGENDRE_L2

    @property
    def size(self) -> int:
        return self.order + 1

    def evaluate(self, s, deriv: bool = False):
        if self.kind is BasisKind.LEGENDRE_L2:
            return legendre(self.order, s, deriv)
        return lobatto(self.order, s, deriv)

# }}}


# {{{ quadrature

@lru_cache(maxsize=64)
def gauss(n: int):
    """``n``-point Gauss rule on [0, 1]; weights sum to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def quadrature_rule(orders, dp: int = 1):
    """Tensor Gauss rule on the unit cube for element orders ``orders``.

    Exact per direction for polynomial degree ``2 (p + dp) + 1``.  Returns
    ``(points, weights)`` with points of shape ``(npts, 3)``.
    """
    orders = tuple(int(p) for p in orders)
    if any(p < 1 for p in orders):
        raise ValueError(f"orders must be >= 1, got {orders}")
    rules = [gauss(p + dp + 1) for p in orders]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.einsum("i,j,k->ijk", *[r[1] for r in rules])
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts, wgrid.ravel()


@lru_cache(maxsize=None)
def legendre_matrices(n: int):
    """1D Legendre Gram tables up to degree ``n`` on [0, 1].

    ``M[i, j] = int P_i P_j``, ``D[i, j] = int P_i' P_j``,
    ``S[i, j] = int P_i' P_j'``.
    """
    pts, wts = gauss(n + 2)
    P, dP = legendre(n, pts, deriv=True)
    M = (P * wts) @ P.T
    D = (dP * wts) @ P.T
    S = (dP * wts) @ dP.T
    M = np.diag(np.diag(M))  # exact orthogonality
    for a in (M, D, S):
        a.setflags(write=False)
    return M, D, S


@lru_cache(maxsize=None)
def lobatto_legendre_matrix(q: int, n: int) -> np.ndarray:
    """``A[i, j] = int_0^1 l_i P_j`` for Lobatto ``l_0..l_q``, Legendre ``P_0..P_n``."""
    pts, wts = gauss((q + n) // 2 + 2)
    A = (lobatto(q, pts) * wts) @ legendre(n, pts).T
    A.setflags(write=False)
    return A

# }}}


# {{{ restriction of hierarchical bases to sub-intervals

@lru_cache(maxsize=None)
def _lobatto_restriction(q: int, c: float, w: float) -> np.ndarray:
    pts, _ = gauss(q + 1)
    slave = lobatto(q, pts)
    master = lobatto(q, c + w * pts)
    # slave.T @ R = master.T  (columns = master functions)
    R = np.linalg.solve(slave.T, master.T)
    R[np.abs(R) < 1e-15] = 0.0
    R.setflags(write=False)
    return R


def lobatto_restriction(q: int, c: float, w: float) -> np.ndarray:
    """Coefficients of master Lobatto functions restricted to ``[c, c + w]``.

    ``R[m, s]`` is the coefficient of slave function ``m`` (Lobatto basis on
    the sub-interval, rescaled to [0, 1]) in the restriction of master
    function ``s``.
    """
    return _lobatto_restriction(int(q), float(c), float(w))


@lru_cache(maxsize=None)
def _legendre_restriction(n: int, c: float, w: float) -> np.ndarray:
    pts, wts = gauss(n + 1)
    sub = legendre(n, pts)
    master = legendre(n, c + w * pts)
    R = ((sub * wts) @ master.T) * (2 * np.arange(n + 1) + 1.0)[:, None]
    R[np.abs(R) < 1e-15] = 0.0
    R.setflags(write=False)
    return R


def legendre_restriction(n: int, c: float, w: float) -> np.ndarray:
    """Legendre analogue of :func:`lobatto_restriction` (degrees ``0..n``)."""
    return _legendre_restriction(int(n), float(c), float(w))


def lobatto_at(q: int, t: float) -> np.ndarray:
    """Row of Lobatto values ``l_0..l_q`` at the single point ``t``."""
    return lobatto(q, np.array([float(t)]))[:, 0]


def face_constraint_rows(master_order, placement) -> np.ndarray:
    """Restriction matrix of a tensor Lobatto face space onto a sub-face.

    ``master_order`` is ``(qa, qb)``; ``placement`` is
    ``((ca, wa), (cb, wb))`` giving the sub-face offset and width in master
    coordinates (``((0, 1), (0, 1))`` is the full face, a half or quadrant
    uses widths 1/2).  Rows and columns use the full tensor ordering
    ``(ia, ib)`` with ``ib`` fastest.
    """
    (qa, qb) = master_order
    (ca, wa), (cb, wb) = placement
    for w in (wa, wb):
        if w not in (0.5, 1.0):
            raise ValueError(f"placement width {w} is not a half or full face")
    return np.kron(lobatto_restriction(qa, ca, wa), lobatto_restriction(qb, cb, wb))

# }}}


# {{{ element spaces

@dataclass(frozen=True)
class ElementSpace:
    """Trial and enriched test space sizes of one hexahedral element."""

    order: tuple
    dp: int = 1

    @property
    def l2_shape(self):
        return tuple(self.order)

    @property
    def n_l2(self) -> int:
        px, py, pz = self.order
        return px * py * pz

    @property
    def n_field(self) -> int:
        return 4 * self.n_l2

    @property
    def h1_shape(self):
        return tuple(p + self.dp + 1 for p in self.order)

    def hdiv_shape(self, d: int):
        return tuple(p + self.dp + (1 if e == d else 0) for e, p in enumerate(self.order))

    @property
    def n_test(self) -> int:
        n = int(np.prod(self.h1_shape))
        return n + sum(int(np.prod(self.hdiv_shape(d))) for d in range(3))

    def test_offsets(self):
        sizes = [int(np.prod(self.h1_shape))] + [int(np.prod(self.hdiv_shape(d))) for d in range(3)]
        return np.concatenate([[0], np.cumsum(sizes)])


def l2_mode_weights(order, jac: float = 1.0) -> np.ndarray:
    """Diagonal of the L2 mass matrix for the Piola-scaled Legendre basis.

    The basis functions are ``(1/jac) P_i P_j P_k``, hence
    ``M = 1 / (jac (2i+1)(2j+1)(2k+1))``.
    """
    px, py, pz = order
    inv = np.einsum("i,j,k->ijk", 2 * np.arange(px) + 1.0, 2 * np.arange(py) + 1.0,
                    2 * np.arange(pz) + 1.0)
    return 1.0 / (jac * inv)


def l2_project(values: np.ndarray, space, component: str = "u", extents=(1.0, 1.0, 1.0)):
    """L2 projection of sampled data onto one L2 field space of an element.

    ``values`` holds the target at the tensor Gauss points of the element
    (shape ``(n, n, n)`` for an ``n``-point rule; ``n`` must cover the
    product degree).  ``space`` is an :class:`ElementSpace` or an order
    triple.  All four field components (``u``, ``sx``, ``sy``, ``sz``) share
    the same space.  Returns ``(coefficients, squared_error)``; the
    coefficients have shape ``order`` and multiply ``(1/jac) P_i P_j P_k``.
    """
    if component not in FIELD_COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    order = tuple(int(p) for p in getattr(space, "order", space))
    h = np.asarray(extents, dtype=float)
    jac = float(np.prod(h))
    if not jac > 0:
        raise ValueError("zero-volume element")
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    pts, wts = gauss(n)
    V = [legendre(p - 1, pts) * wts for p in order]
    # int_K u phi_j dx = jac * int_ref u (1/jac) P_j = int_ref u P_j
    moments = np.einsum("abc,ia,jb,kc->ijk", values, *V)
    M = l2_mode_weights(order, jac)
    coef = moments / M
    normsq = jac * np.einsum("abc,a,b,c->", values ** 2, wts, wts, wts)
    captured = np.sum(moments ** 2 / M)
    return coef, max(normsq - captured, 0.0)


def evaluate_l2(coef: np.ndarray, s: np.ndarray, jac: float = 1.0) -> np.ndarray:
    """Evaluate a Piola-scaled Legendre expansion at reference points ``s`` (n, 3)."""
    coef = np.asarray(coef)
    px, py, pz = coef.shape[-3:]
    Px = legendre(px - 1, s[:, 0])
    Py = legendre(py - 1, s[:, 1])
    Pz = legendre(pz - 1, s[:, 2])
    return np.einsum("...ijk,in,jn,kn->...n", coef, Px, Py, Pz) / jac


def evaluate_l2_grid(coef: np.ndarray, sx, sy, sz, jac: float = 1.0) -> np.ndarray:
    """Evaluate on the tensor grid ``sx x sy x sz``; leading axes of ``coef`` kept."""
    px, py, pz = coef.shape[-3:]
    return np.einsum("...ijk,ia,jb,kc->...abc", coef, legendre(px - 1, sx),
                     legendre(py - 1, sy), legendre(pz - 1, sz)) / jac

# }}}
