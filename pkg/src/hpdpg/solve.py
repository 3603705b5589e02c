"""Global assembly of the DPG normal equations and the sparse SPD solve.

Default layout keeps the element-private field dofs in the global system
(fields first, element by element, then the trace dofs).  With
``condense_interior`` the fields are eliminated element by element and
recovered afterwards; both layouts give the same solution.
"""
from __future__ import annotations

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.blas import dsyrk

from .dpg import GramError, field_matrix, gram_matrix, load_vector, trace_matrix
from .spaces import ElementSpace, gauss
from .traces import StaleDofMapError, TraceSpace

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class DofMap:
    """Element-to-global numbering for one mesh generation."""

    def __init__(self, mesh, problem=None, dp: int = 1, alpha: float = 1.0,
                 condense_interior: bool = False):
        self.mesh = mesh
        self.problem = problem
        self.dp = int(dp)
        self.alpha = float(alpha)
        self.condense_interior = bool(condense_interior)
        self.generation = mesh.generation
        self.traces = TraceSpace(mesh, problem)
        topo = self.traces.topo
        self.leaf_ids = [int(e) for e in topo.ids]
        orders = topo.orders
        nfield = 4 * np.prod(orders, axis=1)
        self.field_count = nfield
        self.field_offset = np.concatenate([[0], np.cumsum(nfield)])
        self.n_interior = int(self.field_offset[-1])
        self.n_interface = int(self.traces.ndof)

    @property
    def ndof(self) -> int:
        """Field dofs plus free trace dofs."""
        return self.n_interior + int(np.count_nonzero(~self.traces.fixed))

    def check(self):
        if self.mesh.generation != self.generation:
            raise StaleDofMapError(
                f"dof map built for generation {self.generation}, mesh is at "
                f"{self.mesh.generation}")


@dataclass
class ElementData:
    eid: int
    fields: np.ndarray      # global indices of the field dofs
    trace_cols: np.ndarray  # global trace dof ids
    K: np.ndarray
    r: np.ndarray
    c0: float
    lGl: float = 0.0
    Z: np.ndarray | None = None
    z: np.ndarray | None = None


@dataclass
class GlobalSystem:
    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray        # global dof ids of the unknowns
    fixed_values: np.ndarray
    dofmap: DofMap
    elements: list = field(default_factory=list)


def _sym_product(W):
    K = dsyrk(1.0, W, trans=1, lower=0)
    iu = np.triu_indices(K.shape[0], 1)
    K[iu[1], iu[0]] = K[iu]
    return K


class BlockCache:
    """LRU store of the position-independent element blocks.

    ``G``, ``B`` and the field block of the stiffness depend only on the
    element extents and order (coefficients are constant), so on dyadic
    meshes a handful of entries serves most elements.
    """

    def __init__(self, max_bytes: int):
        self.max_bytes = int(max_bytes)
        self.data = OrderedDict()
        self.nbytes = 0
        self.hits = 0
        self.misses = 0

    def get(self, key, build):
        if key in self.data:
            self.hits += 1
            self.data.move_to_end(key)
            return self.data[key]
        self.misses += 1
        val = build()
        size = sum(a.nbytes for a in val if isinstance(a, np.ndarray))
        if size <= self.max_bytes:
            self.data[key] = val
            self.nbytes += size
            while self.nbytes > self.max_bytes:
                _, old = self.data.popitem(last=False)
                self.nbytes -= sum(a.nbytes for a in old if isinstance(a, np.ndarray))
        return val

    def clear(self):
        self.data.clear()
        self.nbytes = 0


BLOCKS = BlockCache(int(float(os.environ.get("HPDPG_CACHE_MB", "1024")) * 2**20))


def _field_blocks(space, h, eps, beta, alpha, eid):
    G = gram_matrix(space, h, eps, beta, alpha)
    try:
        L = sla.cholesky(G, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise GramError("Gram matrix not positive definite", eid) from None
    WB = sla.solve_triangular(L, field_matrix(space, h, eps, beta), lower=True,
                              check_finite=False)
    Kff = _sym_product(WB)
    try:
        Cff = sla.cholesky(Kff, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        Cff = None
    return L, WB, Kff, Cff


def element_blocks(dofmap: DofMap, eid):
    """``(L, W_B, K_ff, chol(K_ff))`` for an element, shared across equal shapes."""
    mesh = dofmap.mesh
    e = mesh[eid]
    ib = e.ibox
    ext = (ib[1] - ib[0], ib[3] - ib[2], ib[5] - ib[4])
    prob = dofmap.problem
    eps = float(getattr(prob, "eps_d", 1.0))
    beta = tuple(float(x) for x in getattr(prob, "beta", (0.0, 0.0, 0.0)))
    key = (ext, mesh.cell, tuple(e.order), dofmap.dp, dofmap.alpha, eps, beta)
    space = ElementSpace(e.order, dofmap.dp)
    h = mesh.extents(eid)
    return space, h, BLOCKS.get(key, lambda: _field_blocks(space, h, eps, beta,
                                                            dofmap.alpha, eid))


def element_matrices(dofmap: DofMap, eid):
    """Optimal-test stiffness of one element: fields first, then trace columns."""
    mesh = dofmap.mesh
    space, h, (L, WB, Kff, Cff) = element_blocks(dofmap, eid)
    prob = dofmap.problem
    eps = float(getattr(prob, "eps_d", 1.0))
    beta = tuple(float(x) for x in getattr(prob, "beta", (0.0, 0.0, 0.0)))
    traces = dofmap.traces.element_traces(eid)
    Bh, tcols = trace_matrix(space, h, traces, eps, beta)
    l = load_vector(space, mesh.box(eid), getattr(prob, "source", None))
    WT = sla.solve_triangular(L, Bh, lower=True, check_finite=False)
    w = sla.solve_triangular(L, l, lower=True, check_finite=False)
    nf = WB.shape[1]
    n = nf + WT.shape[1]
    K = np.empty((n, n))
    K[:nf, :nf] = Kff
    K[:nf, nf:] = WB.T @ WT
    K[nf:, :nf] = K[:nf, nf:].T
    K[nf:, nf:] = _sym_product(WT)
    r = np.concatenate([WB.T @ w, WT.T @ w])
    return K, r, float(w @ w), nf, tcols, Cff


def assemble_global(dofmap: DofMap, keep_elements: bool = True) -> GlobalSystem:
    """Scatter all condensed element systems and eliminate fixed trace dofs."""
    dofmap.check()
    ts = dofmap.traces
    nI = dofmap.n_interface
    cond = dofmap.condense_interior
    fixed = ts.fixed
    values = ts.values
    ntot = nI if cond else nI + dofmap.n_interior
    is_fixed = np.zeros(ntot, dtype=bool)
    is_fixed[:nI] = fixed
    free = np.nonzero(~is_fixed)[0]
    gmap = np.full(ntot, -1, dtype=np.int64)
    gmap[free] = np.arange(len(free))
    fixval = np.zeros(ntot)
    fixval[:nI] = np.where(fixed, values, 0.0)
    b = np.zeros(len(free))
    rows, cols, vals = [], [], []
    nbuf = 0
    A = sp.csr_matrix((len(free), len(free)))
    elements = []
    for k, eid in enumerate(dofmap.leaf_ids):
        K, r, lGl, nf, tcols, Cff = element_matrices(dofmap, eid)
        fields = nI + np.arange(dofmap.field_offset[k], dofmap.field_offset[k + 1])
        data = ElementData(eid, fields, tcols, K, r, lGl, lGl)
        if cond:
            Kft = K[:nf, nf:]
            if Cff is None:
                raise SolverError(f"element {eid}: field block not positive definite")
            cf = (Cff, True)
            Z = sla.cho_solve(cf, Kft, check_finite=False)
            z = sla.cho_solve(cf, r[:nf], check_finite=False)
            Kc = K[nf:, nf:] - Kft.T @ Z
            Kc = 0.5 * (Kc + Kc.T)
            rc = r[nf:] - Kft.T @ z
            data = ElementData(eid, fields, tcols, Kc, rc, lGl - float(r[:nf] @ z), lGl, Z, z)
            idx = tcols
        else:
            idx = np.concatenate([fields, tcols])
        Ke, re = data.K, data.r
        g = gmap[idx]
        fr = g >= 0
        fc = ~fr
        if np.any(fc):
            re = re - Ke[:, fc] @ fixval[idx[fc]]
        gi = g[fr]
        np.add.at(b, gi, re[fr])
        sub = Ke[np.ix_(fr, fr)]
        rows.append(np.repeat(gi, len(gi)).astype(np.int32))
        cols.append(np.tile(gi, len(gi)).astype(np.int32))
        vals.append(sub.ravel())
        nbuf += sub.size
        if nbuf > 4_000_000:
            A = A + _coo(rows, cols, vals, len(free))
            rows, cols, vals, nbuf = [], [], [], 0
        if keep_elements:
            elements.append(data)
    if rows:
        A = A + _coo(rows, cols, vals, len(free))
    A = A.tocsr()
    A.sum_duplicates()
    return GlobalSystem(A, b, free, fixval, dofmap, elements)


def _coo(rows, cols, vals, n):
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def solve_spd(A, b, rtol: float = 1e-10):
    """Solve an SPD system; sparse LU on the symmetrically scaled matrix, CG fallback."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise SolverError("matrix has a non-positive diagonal entry; not SPD")
    s = 1.0 / np.sqrt(d)
    S = sp.diags(s)
    As = (S @ A @ S).tocsc()
    bs = s * b
    x = None
    try:
        lu = spla.splu(As, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True, DiagPivotThresh=0.01))
        y = lu.solve(bs)
        x = s * y
        res = np.linalg.norm(A @ x - b) / bn
        if not np.isfinite(res) or res > rtol:
            # one step of iterative refinement before giving up on the factor
            y = y + lu.solve(bs - As @ y)
            x = s * y
            res = np.linalg.norm(A @ x - b) / bn
        if np.isfinite(res) and res <= rtol:
            return x
        log.warning("direct solve residual %.2e above target; trying CG", res)
    except RuntimeError as exc:
        log.warning("direct factorization failed (%s); trying CG", exc)
    with np.errstate(divide="ignore", invalid="ignore"):
        y, info = spla.cg(As, bs, rtol=rtol * 1e-2, maxiter=20 * n + 100)
    x = s * y
    res = np.linalg.norm(A @ x - b) / bn
    if info != 0 or not np.isfinite(res) or res > rtol:
        raise SolverError(f"SPD solve failed: relative residual {res:.3e} (cg info {info})")
    return x


def dump_matrix_market(system: GlobalSystem, path):
    import scipy.io
    scipy.io.mmwrite(str(path), system.A)


@dataclass
class Solution:
    dofmap: DofMap
    trace: np.ndarray            # all trace dofs including fixed values
    fields: dict                 # eid -> (4, px, py, pz) coefficients
    eta: dict = field(default_factory=dict)

    @property
    def eta_total(self) -> float:
        return float(np.sqrt(sum(self.eta[k] for k in sorted(self.eta))))


def recover_fields(system: GlobalSystem, x) -> Solution:
    """Element field coefficients ``(u, sigma_x, sigma_y, sigma_z)`` from a solution."""
    dm = system.dofmap
    full = system.fixed_values.copy()
    full[system.free] = x
    nI = dm.n_interface
    trace = full[:nI]
    fields = {}
    mesh = dm.mesh
    for k, data in enumerate(system.elements):
        p = mesh[data.eid].order
        if data.Z is not None:
            xt = trace[data.trace_cols]
            xf = data.z - data.Z @ xt
        else:
            xf = full[data.fields]
        fields[data.eid] = xf.reshape(4, *p)
    return Solution(dm, trace, fields)


# below this fraction of |l|_G^2 the quadratic form has lost most digits
CANCEL = 1e-6


def residuals(system: GlobalSystem, sol: Solution) -> dict:
    """``eta_K = |l - B x|^2_{G^-1}`` per element.

    The stored quadratic form ``c0 - 2 x.r + x.K x`` is exact in exact
    arithmetic but loses digits when ``eta_K`` is tiny compared with its
    terms; such elements are recomputed directly.
    """
    eta = {}
    for data in system.elements:
        xt = sol.trace[data.trace_cols]
        if data.Z is not None:
            x = xt
        else:
            x = np.concatenate([sol.fields[data.eid].ravel(), xt])
        xKx = float(x @ (data.K @ x))
        val = data.c0 - 2.0 * float(x @ data.r) + xKx
        scale = max(data.lGl, float(x @ x) * float(np.max(np.diag(data.K), initial=0.0)))
        if val < CANCEL * scale:
            val = direct_residual(system.dofmap, data.eid, sol.fields[data.eid].ravel(), xt)
        eta[data.eid] = max(val, 0.0)
    sol.eta = eta
    return eta


def direct_residual(dofmap: DofMap, eid, xf, xt) -> float:
    mesh = dofmap.mesh
    space, h, (L, WB, _, _) = element_blocks(dofmap, eid)
    prob = dofmap.problem
    eps = float(getattr(prob, "eps_d", 1.0))
    beta = tuple(float(x) for x in getattr(prob, "beta", (0.0, 0.0, 0.0)))
    Bh, _ = trace_matrix(space, h, dofmap.traces.element_traces(eid), eps, beta)
    l = load_vector(space, mesh.box(eid), getattr(prob, "source", None))
    res = l - L @ (WB @ xf) - Bh @ xt
    y = sla.solve_triangular(L, res, lower=True, check_finite=False)
    return float(y @ y)


def solve_mesh(mesh, problem, dp: int = 1, alpha: float = 1.0, condense_interior: bool = True,
               with_residual: bool = True, dump=None) -> Solution:
    """Assemble, solve, recover fields and (optionally) element residuals."""
    dm = DofMap(mesh, problem, dp, alpha, condense_interior)
    system = assemble_global(dm)
    if dump:
        dump_matrix_market(system, dump)
    x = solve_spd(system.A, system.b)
    sol = recover_fields(system, x)
    if with_residual:
        residuals(system, sol)
    return sol


def field_errors(sol: Solution, problem, extra: int = 3):
    """Squared L2 errors and squared norms of ``(u, sigma)`` against the exact solution.

    Returns ``(err2, norm2)`` dictionaries keyed by element id.
    """
    from .spaces import evaluate_l2_grid
    mesh = sol.dofmap.mesh
    err2, norm2 = {}, {}
    for eid, coef in sol.fields.items():
        box = mesh.box(eid)
        lo, h = box[0::2], box[1::2] - box[0::2]
        jac = float(np.prod(h))
        n = max(mesh[eid].order) + extra
        s, w = gauss(n)
        X = np.stack(np.meshgrid(lo[0] + h[0] * s, lo[1] + h[1] * s, lo[2] + h[2] * s,
                                 indexing="ij"), axis=-1).reshape(-1, 3)
        vals = evaluate_l2_grid(coef, s, s, s, jac).reshape(4, -1)
        ex = np.vstack([problem.exact(X)[None, :], problem.sigma_exact(X).T])
        W = jac * np.einsum("a,b,c->abc", w, w, w).ravel()
        err2[eid] = float(np.sum((vals - ex) ** 2 * W))
        norm2[eid] = float(np.sum(ex ** 2 * W))
    return err2, norm2


def relative_error(sol: Solution, problem, extra: int = 3) -> float:
    err2, norm2 = field_errors(sol, problem, extra)
    keys = sorted(err2)
    return float(np.sqrt(sum(err2[k] for k in keys) / sum(norm2[k] for k in keys)))
