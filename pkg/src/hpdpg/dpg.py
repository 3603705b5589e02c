"""Element-local ultraweak DPG matrices.

The first-order system ``sigma - eps grad u = 0``, ``beta . grad u -
div sigma = f`` is tested with ``(tau, v)`` and integrated by parts on each
element:

    b((u, sigma), (v, tau)) = (sigma, tau + grad v) + (u, eps div tau - beta . grad v)
    bhat((u_hat, s_hat), v) = -<u_hat, eps tau.n - (beta.n) v> - <s_hat_n, v>

With ``eps = 1`` and ``beta = 0`` this is the Poisson form.  The test norm
is the adjoint graph norm ``|A* (v, tau)|^2 + alpha (|v|^2 + |tau|^2)``
with ``A* (v, tau) = (tau + grad v, eps div tau - beta . grad v)``.

Test functions are unscaled tensor Legendre polynomials on the reference
cube: ``v`` of degree ``p + dp`` per direction, ``tau_d`` of degree
``p + dp`` along ``d`` and ``p + dp - 1`` across.  Trial fields are the
Piola-scaled Legendre polynomials of degree ``p - 1``.  Every volume and
face integral is a sum of Kronecker products of exact 1D tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .spaces import ElementSpace, gauss, legendre, legendre_matrices, lobatto_legendre_matrix


class GramError(np.linalg.LinAlgError):
    def __init__(self, msg, eid=None):
        super().__init__(msg if eid is None else f"element {eid}: {msg}")
        self.eid = eid


@dataclass
class ElementSystem:
    G: np.ndarray
    B: np.ndarray
    Bhat: np.ndarray
    l: np.ndarray
    trace_cols: np.ndarray
    space: ElementSpace
    eps: float = 1.0
    beta: tuple = (0.0, 0.0, 0.0)
    eid: int | None = None


@dataclass
class CondensedElement:
    stiffness: np.ndarray
    rhs: np.ndarray
    lGl: float = 0.0
    extra: dict = field(default_factory=dict)


# {{{ 1D tables

_NMAX = 16


def _table(nA: int, nB: int, dA: int, dB: int) -> np.ndarray:
    M, D, S = legendre_matrices(_NMAX)
    if dA == 0 and dB == 0:
        return M[:nA, :nB]
    if dA == 1 and dB == 0:
        return D[:nA, :nB]
    if dA == 0 and dB == 1:
        return D.T[:nA, :nB]
    return S[:nA, :nB]


@lru_cache(maxsize=4096)
def _kron3(shA: tuple, shB: tuple, dA: int, dB: int) -> np.ndarray:
    """``int P^(A) P^(B)`` over the unit cube; ``dA``/``dB`` name a derivative axis or -1."""
    mats = [_table(shA[k], shB[k], int(dA == k), int(dB == k)) for k in range(3)]
    out = np.kron(np.kron(mats[0], mats[1]), mats[2])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=1024)
def _face_value(n: int, side: int) -> np.ndarray:
    """Legendre values ``P_0..P_{n-1}`` at ``s = side`` as a column."""
    v = np.ones(n) if side == 1 else (-1.0) ** np.arange(n)
    return v[:, None]

# }}}


# {{{ the adjoint operator as tensor terms

def _blocks(space: ElementSpace):
    """Shapes of the test blocks ``[v, tau_x, tau_y, tau_z]``."""
    return [space.h1_shape] + [space.hdiv_shape(d) for d in range(3)]


def adjoint_terms(h, eps: float, beta, alpha: float):
    """Components of the graph norm as lists of ``(block, coef, deriv axis)``."""
    comps = []
    for c in range(3):
        comps.append([(1 + c, 1.0, -1), (0, 1.0 / h[c], c)])
    div = [(1 + d, eps / h[d], d) for d in range(3)]
    div += [(0, -beta[d] / h[d], d) for d in range(3) if beta[d] != 0.0]
    comps.append(div)
    ra = np.sqrt(alpha)
    comps.append([(0, ra, -1)])
    for d in range(3):
        comps.append([(1 + d, ra, -1)])
    return comps

# }}}


def gram_matrix(space: ElementSpace, h, eps=1.0, beta=(0.0, 0.0, 0.0), alpha=1.0):
    h = np.asarray(h, dtype=float)
    jac = float(np.prod(h))
    shapes = _blocks(space)
    offs = space.test_offsets()
    G = np.zeros((offs[-1], offs[-1]))
    for comp in adjoint_terms(h, eps, beta, alpha):
        for X, cX, dX in comp:
            for Y, cY, dY in comp:
                if Y < X:
                    continue
                blk = (jac * cX * cY) * _kron3(shapes[X], shapes[Y], dX, dY)
                G[offs[X]:offs[X + 1], offs[Y]:offs[Y + 1]] += blk
    # mirror the upper block triangle
    for X in range(4):
        for Y in range(X):
            G[offs[X]:offs[X + 1], offs[Y]:offs[Y + 1]] = G[offs[Y]:offs[Y + 1], offs[X]:offs[X + 1]].T
    return G


def field_matrix(space: ElementSpace, h, eps=1.0, beta=(0.0, 0.0, 0.0)):
    """``B`` with columns ``[u, sigma_x, sigma_y, sigma_z]``."""
    h = np.asarray(h, dtype=float)
    shapes = _blocks(space)
    offs = space.test_offsets()
    n = space.n_l2
    tr = tuple(space.order)
    B = np.zeros((offs[-1], 4 * n))
    comps = adjoint_terms(h, eps, beta, 0.0)[:4]
    # components 0..2 pair with sigma_c, component 3 with u
    for c, comp in enumerate(comps):
        col = 1 + c if c < 3 else 0
        for X, cX, dX in comp:
            B[offs[X]:offs[X + 1], col * n:(col + 1) * n] += cX * _kron3(shapes[X], tr, dX, -1)
    return B


def trace_matrix(space: ElementSpace, h, traces, eps=1.0, beta=(0.0, 0.0, 0.0)):
    """``Bhat`` over the union of the element's global trace columns."""
    h = np.asarray(h, dtype=float)
    jac = float(np.prod(h))
    shapes = _blocks(space)
    offs = space.test_offsets()
    cols = np.unique(np.concatenate([np.concatenate([ft.uhat.cols, ft.sig.cols])
                                     for ft in traces]))
    Bh = np.zeros((offs[-1], len(cols)))
    for ft in traces:
        d, s = ft.axis, ft.side
        a, b = [k for k in range(3) if k != d]
        n = 2 * s - 1
        area = jac / h[d]
        # u_hat against eps tau_d . n and -(beta . n) v
        terms = [(1 + d, -n * eps)]
        if beta[d] != 0.0:
            terms.append((0, n * beta[d]))
        qa, qb = ft.q
        loc = np.zeros((offs[-1], (qa + 1) * (qb + 1)))
        for X, coef in terms:
            sh = shapes[X]
            mats = [None, None, None]
            mats[d] = _face_value(sh[d], s)
            mats[a] = lobatto_legendre_matrix(qa, sh[a] - 1).T
            mats[b] = lobatto_legendre_matrix(qb, sh[b] - 1).T
            loc[offs[X]:offs[X + 1]] += (coef * area) * np.kron(np.kron(mats[0], mats[1]), mats[2])
        idx = np.searchsorted(cols, ft.uhat.cols)
        Bh[:, idx] += loc @ ft.uhat.mat
        # sigma_hat_n = n * (sigma . e_d) against v
        ra, rb = ft.r
        sh = shapes[0]
        mats = [None, None, None]
        mats[d] = _face_value(sh[d], s)
        mats[a] = _table(sh[a], ra, 0, 0)
        mats[b] = _table(sh[b], rb, 0, 0)
        locs = (-n * area) * np.kron(np.kron(mats[0], mats[1]), mats[2])
        idx = np.searchsorted(cols, ft.sig.cols)
        Bh[offs[0]:offs[1], idx] += locs @ ft.sig.mat
    return Bh, cols


def load_vector(space: ElementSpace, box, source, npts=None):
    box = np.asarray(box, dtype=float)
    lo, h = box[0::2], box[1::2] - box[0::2]
    jac = float(np.prod(h))
    offs = space.test_offsets()
    l = np.zeros(offs[-1])
    if source is None:
        return l
    nv = space.h1_shape
    n = npts or (max(space.order) + space.dp + 4)
    s, w = gauss(n)
    X = np.stack(np.meshgrid(lo[0] + h[0] * s, lo[1] + h[1] * s, lo[2] + h[2] * s,
                             indexing="ij"), axis=-1)
    f = np.asarray(source(X.reshape(-1, 3)), dtype=float).reshape(n, n, n)
    Vx, Vy, Vz = (legendre(nv[k] - 1, s) * w for k in range(3))
    l[:offs[1]] = jac * np.einsum("abc,ia,jb,kc->ijk", f, Vx, Vy, Vz).ravel()
    return l


def standalone_traces(order):
    """Unconstrained per-face trace bases for a single isolated element.

    Each face carries its own full Lobatto and Legendre tensor basis with
    private columns; useful for element-level tests.
    """
    from .traces import FaceTrace, Lin
    out = []
    col = 0
    for fl in range(6):
        d = fl // 2
        a, b = [k for k in range(3) if k != d]
        qa, qb = order[a], order[b]
        nu = (qa + 1) * (qb + 1)
        ns = qa * qb
        u = Lin(np.arange(col, col + nu), np.eye(nu))
        col += nu
        sg = Lin(np.arange(col, col + ns), np.eye(ns))
        col += ns
        out.append(FaceTrace(d, fl % 2, (qa, qb), u, (qa, qb), sg))
    return out


def assemble_element(box, order, problem=None, traces=None, dp: int = 1, alpha: float = 1.0,
                     eid=None) -> ElementSystem:
    """Build ``G``, ``B``, ``Bhat`` and ``l`` for one leaf element.

    ``box`` is ``[x0, x1, y0, y1, z0, z1]``; ``problem`` supplies ``eps``,
    ``beta`` and ``source`` (any may be missing: Poisson with ``f = 0``).
    """
    order = tuple(int(p) for p in order)
    space = ElementSpace(order, dp)
    box = np.asarray(box, dtype=float)
    h = box[1::2] - box[0::2]
    if np.any(h <= 0):
        raise GramError("degenerate element", eid)
    eps = float(getattr(problem, "eps_d", 1.0))
    beta = tuple(float(x) for x in getattr(problem, "beta", (0.0, 0.0, 0.0)))
    if traces is None:
        traces = standalone_traces(order)
    G = gram_matrix(space, h, eps, beta, alpha)
    B = field_matrix(space, h, eps, beta)
    Bh, cols = trace_matrix(space, h, traces, eps, beta)
    l = load_vector(space, box, getattr(problem, "source", None))
    return ElementSystem(G, B, Bh, l, cols, space, eps, beta, eid)


def _cholesky(G, eid=None):
    try:
        return sla.cholesky(G, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise GramError(f"Gram matrix not positive definite ({exc})", eid) from None


def condense(sys: ElementSystem) -> CondensedElement:
    """Optimal-test stiffness ``[B|Bhat]^T G^-1 [B|Bhat]`` and its load."""
    L = _cholesky(sys.G, sys.eid)
    BB = np.hstack([sys.B, sys.Bhat])
    W = sla.solve_triangular(L, BB, lower=True, check_finite=False)
    w = sla.solve_triangular(L, sys.l, lower=True, check_finite=False)
    K = W.T @ W
    K = 0.5 * (K + K.T)
    return CondensedElement(K, W.T @ w, float(w @ w))


def element_residual(sys: ElementSystem, field_coef, trace_coef) -> float:
    """``eta_K = r^T G^-1 r`` with ``r = l - B u_h - Bhat u_hat_h``."""
    field_coef = np.asarray(field_coef, dtype=float).ravel()
    trace_coef = np.asarray(trace_coef, dtype=float).ravel()
    if field_coef.shape[0] != sys.B.shape[1] or trace_coef.shape[0] != sys.Bhat.shape[1]:
        raise ValueError("coefficient dimensions do not match the element system")
    r = sys.l - sys.B @ field_coef - sys.Bhat @ trace_coef
    return residual_from(sys.G, r, sys.eid)


def residual_from(G, r, eid=None) -> float:
    L = _cholesky(G, eid)
    y = sla.solve_triangular(L, r, lower=True, check_finite=False)
    return float(y @ y)
