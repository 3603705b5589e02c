"""Two-grid hp-adaptation: marking, refinement competition and execution.

The reference solution lives on a fine mesh obtained by refining the marked
elements isotropically in h and p.  For each marked coarse element the fine
solution is reduced to Legendre moments on the 27 dyadic sub-boxes that can
occur as subelements of an h-candidate; every projection error needed by the
competition is then a table lookup.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .mesh import RefFlag, UnwantedPolicy, child_boxes, refine_with_closure, unrefine
from .solve import DofMap, relative_error, solve_mesh
from .spaces import gauss, legendre

log = logging.getLogger(__name__)

NCOMP = 4
GREEDY = 0.7
INVEST = 0.25
NOISE = 64 * np.finfo(float).eps

# sub-box index per axis: 0 -> [0, 1/2], 1 -> [1/2, 1], 2 -> [0, 1]
_SUB_INTERVALS = ((0.0, 0.5), (0.5, 1.0), (0.0, 1.0))


# {{{ marking

@dataclass
class MarkSet:
    ids: list
    theta: float


def doerfler_mark(eta: dict, theta: float) -> MarkSet:
    """Minimal set of largest indicators carrying ``theta**2`` of the total.

    ``eta`` maps element ids to squared indicators.  Ties are broken by
    ascending id.  All-zero indicators give an empty set.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    items = sorted(eta.items(), key=lambda kv: (-kv[1], kv[0]))
    vals = np.array([v for _, v in items], dtype=float)
    if np.any(vals < 0):
        raise ValueError("negative indicator")
    total = float(vals.sum())
    if total == 0.0:
        return MarkSet([], theta)
    if theta == 1.0:
        return MarkSet([k for k, v in items if v > 0], theta)
    target = theta * theta * total
    csum = np.cumsum(vals)
    n = int(np.searchsorted(csum, target, side="left")) + 1
    n = min(n, len(items))
    return MarkSet([k for k, _ in items[:n]], theta)

# }}}


# {{{ reference moments

class MomentTable:
    """Projection errors of a fixed function on the 27 sub-boxes of an element.

    ``err2(sub, order)`` is the squared L2 error, summed over the field
    components, of the best approximation with ``order`` Legendre modes per
    axis on sub-box ``sub`` (a triple of indices into the half/half/whole
    intervals).
    """

    def __init__(self, normsq, captured, p_max):
        self.normsq = normsq          # (3, 3, 3)
        self.captured = captured      # (3, 3, 3, P, P, P), cumulative
        self.p_max = p_max

    def err2(self, sub, order) -> float:
        i, j, k = sub
        qx, qy, qz = order
        nsq = self.normsq[i, j, k]
        val = nsq - self.captured[i, j, k, qx - 1, qy - 1, qz - 1]
        # below this the difference is rounding noise of the two sums
        if val <= NOISE * nsq:
            return 0.0
        return float(val)

    @classmethod
    def from_cells(cls, box, cells, p_max: int):
        """Build the table from piecewise polynomial data.

        ``box`` is the element ``[x0, x1, ...]``; ``cells`` is a list of
        ``(cell box, coef)`` with ``coef`` of shape ``(ncomp, px, py, pz)``
        multiplying ``P_a P_b P_c / jac`` on the cell.
        """
        box = np.asarray(box, dtype=float)
        P = p_max
        mom = np.zeros((3, 3, 3, NCOMP, P, P, P))
        nsq = np.zeros((3, 3, 3))
        for cbox, coef in cells:
            cbox = np.asarray(cbox, dtype=float)
            hc = cbox[1::2] - cbox[0::2]
            jac = float(np.prod(hc))
            I, G = [], []
            for d in range(3):
                Id, Gd = _overlap_tables(box[2 * d], box[2 * d + 1], cbox[2 * d],
                                         cbox[2 * d + 1], coef.shape[1 + d], P)
                I.append(Id)
                G.append(Gd)
            for i in range(3):
                if not I[0][i].any():
                    continue
                for j in range(3):
                    if not I[1][j].any():
                        continue
                    for k in range(3):
                        if not I[2][k].any():
                            continue
                        mom[i, j, k] += np.einsum("nabc,ai,bj,ck->nijk", coef, I[0][i],
                                                  I[1][j], I[2][k], optimize=True) / jac
                        nsq[i, j, k] += np.einsum("nabc,ax,by,cz,nxyz->", coef, G[0][i],
                                                  G[1][j], G[2][k], coef,
                                                  optimize=True) / (jac * jac)
        sq = np.sum(mom * mom, axis=3)
        cap = np.cumsum(np.cumsum(np.cumsum(sq, axis=3), axis=4), axis=5)
        return cls(nsq, cap, p_max)


def _overlap_tables(x0, x1, c0, c1, nc, P):
    """Per sub-interval: ``I[a, i] = int P_a^cell phi_i^sub`` and Gram of the cell basis.

    ``phi_i`` are Legendre polynomials orthonormal on the sub-interval.
    """
    h = x1 - x0
    hc = c1 - c0
    npts = (nc + P) // 2 + 1
    s, w = gauss(npts)
    I = np.zeros((3, nc, P))
    G = np.zeros((3, nc, nc))
    for k, (a, b) in enumerate(_SUB_INTERVALS):
        lo, hi = x0 + a * h, x0 + b * h
        olo, ohi = max(lo, c0), min(hi, c1)
        if ohi - olo <= 1e-14 * h:
            continue
        x = olo + (ohi - olo) * s
        ww = (ohi - olo) * w
        Pc = legendre(nc - 1, (x - c0) / hc)
        hs = hi - lo
        norm = np.sqrt((2 * np.arange(P) + 1.0) / hs)
        Ps = legendre(P - 1, (x - lo) / hs) * norm[:, None]
        I[k] = (Pc * ww) @ Ps.T
        G[k] = (Pc * ww) @ Pc.T
    return I, G


def sub_index(flag: RefFlag):
    """Sub-box indices of the children of ``flag`` in child order."""
    unit = (0, 2, 0, 2, 0, 2)
    out = []
    for cb in child_boxes(unit, flag):
        idx = []
        for d in range(3):
            lo, hi = cb[2 * d], cb[2 * d + 1]
            idx.append(2 if hi - lo == 2 else lo)
        out.append(tuple(idx))
    return out

# }}}


# {{{ candidates

def rate(err_old: float, dofs_old: int, err_new: float, dofs_new: int) -> float:
    """Error reduction per added degree of freedom."""
    return (err_old - err_new) / (dofs_new - dofs_old)


def l2_dofs(orders) -> int:
    return NCOMP * sum(int(np.prod(q)) for q in orders)


@dataclass
class PathState:
    orders: tuple     # per-subelement order triples
    dofs: int
    err2: float


@dataclass
class CandidateResult:
    flag: RefFlag
    suborders: tuple
    rate: float
    path: list
    dofs_old: int
    err_old: float
    dofs_new: int = 0
    err_new: float = 0.0

    def state_rate(self, st: PathState) -> float:
        if st.dofs <= self.dofs_old or st.err2 >= self.err_old:
            return -math.inf
        return rate(self.err_old, self.dofs_old, st.err2, st.dofs)

    @property
    def viable(self) -> bool:
        return self.rate > 0 and math.isfinite(self.rate)


@dataclass
class Decision:
    eid: int
    winner: CandidateResult
    rate: float
    candidates: list = field(default_factory=list)


def _capped(order, p_max):
    return all(q >= p_max for q in order)


def _p_path(table: MomentTable, sub, start, p_max):
    """Maximum error reduction path from ``start`` to the full increment.

    Returns the visited states after ``start`` as ``(order, err2)``.  Each
    stage keeps the single-direction increment with the best rate relative
    to ``start``; ties go to the lower axis.
    """
    e0 = table.err2(sub, start)
    n0 = NCOMP * int(np.prod(start))
    cur = tuple(start)
    todo = [d for d in range(3) if start[d] < p_max]
    path = []
    while todo:
        best = None
        for d in todo:
            q = list(cur)
            q[d] += 1
            q = tuple(q)
            e = table.err2(sub, q)
            r = rate(e0, n0, e, NCOMP * int(np.prod(q)))
            if best is None or r > best[0]:
                best = (r, d, q, e)
        _, d, cur, e = best
        todo.remove(d)
        path.append((cur, e))
    return path


def p_path_search(table: MomentTable, start, p_max: int, sub=(2, 2, 2)) -> CandidateResult:
    start = tuple(int(q) for q in start)
    e0 = table.err2(sub, start)
    n0 = NCOMP * int(np.prod(start))
    path = [PathState((start,), n0, e0)]
    for q, e in _p_path(table, sub, start, p_max):
        path.append(PathState((q,), NCOMP * int(np.prod(q)), e))
    cand = CandidateResult(RefFlag.NONE, (start,), -math.inf, path, n0, e0, n0, e0)
    _pick_best(cand)
    return cand


def _pick_best(cand: CandidateResult):
    for st in cand.path:
        r = cand.state_rate(st)
        if r > cand.rate:
            cand.rate = r
            cand.suborders = st.orders
            cand.dofs_new = st.dofs
            cand.err_new = st.err2


def h_path_search(table: MomentTable, start, flag: RefFlag, p_max: int) -> CandidateResult:
    """Greedy path through subelement orders of an h-refined element."""
    if flag is RefFlag.NONE:
        raise ValueError("h_path_search needs an h-refinement flag")
    start = tuple(int(q) for q in start)
    err_old = table.err2((2, 2, 2), start)
    dofs_old = NCOMP * int(np.prod(start))
    budget = 8 * NCOMP * int(np.prod([min(q + 1, p_max) for q in start]))
    subs = sub_index(flag)
    orders = [(1, 1, 1)] * len(subs)
    errs = [table.err2(s, o) for s, o in zip(subs, orders)]
    path = [PathState(tuple(orders), l2_dofs(orders), float(sum(errs)))]
    while True:
        active = [c for c in range(len(subs)) if not _capped(orders[c], p_max)]
        if not active:
            break
        mx = max(errs[c] for c in active)
        chosen = [c for c in active if errs[c] >= GREEDY * mx]
        new = list(orders)
        for c in chosen:
            sub = subs[c]
            steps = _p_path(table, sub, orders[c], p_max)
            e0, n0 = errs[c], NCOMP * int(np.prod(orders[c]))
            best, best_r = None, 0.0
            for q, e in steps:
                r = rate(e0, n0, e, NCOMP * int(np.prod(q)))
                if r > best_r:
                    best, best_r = q, r
            new[c] = best if best is not None else steps[-1][0]
        dofs = l2_dofs(new)
        if dofs > budget:
            break
        orders = new
        errs = [table.err2(s, o) for s, o in zip(subs, orders)]
        path.append(PathState(tuple(orders), dofs, float(sum(errs))))
    cand = CandidateResult(flag, path[0].orders, -math.inf, path, dofs_old, err_old,
                           dofs_old, err_old)
    _pick_best(cand)
    return cand


def compete(table: MomentTable, eid, start, p_max: int) -> Decision | None:
    """Best of the p-candidate and the seven h-candidates, or ``None`` if none gains."""
    cands = [p_path_search(table, start, p_max)]
    cands += [h_path_search(table, start, f, p_max) for f in list(RefFlag)[1:]]
    best = cands[0]
    for c in cands[1:]:
        if c.rate > best.rate:
            best = c
    if not best.viable:
        log.info("element %s: no candidate reduces the error; skipped", eid)
        return None
    return Decision(int(eid), best, best.rate, cands)


def select_and_invest(decisions) -> dict:
    """Final plan ``{eid: (flag, suborders)}`` from the per-element decisions."""
    decisions = [d for d in decisions if d is not None]
    if not decisions:
        return {}
    emax = max(d.rate for d in decisions)
    thr = INVEST * emax
    plan = {}
    for d in sorted(decisions, key=lambda d: d.eid):
        if d.rate < thr:
            continue
        w = d.winner
        if w.flag is RefFlag.NONE:
            plan[d.eid] = (w.flag, w.suborders)
            continue
        pick = None
        for st in w.path:
            if w.state_rate(st) >= thr and (pick is None or st.dofs > pick.dofs):
                pick = st
        plan[d.eid] = (w.flag, pick.orders)
    return plan


def execute_plan(mesh, plan: dict):
    """Apply p-updates, then all h-refinements with minimal closure."""
    for eid in sorted(plan):
        flag, orders = plan[eid]
        if flag is RefFlag.NONE:
            mesh.set_order(eid, orders[0])
    reqs = [(eid, plan[eid][0]) for eid in sorted(plan) if plan[eid][0] is not RefFlag.NONE]
    child_orders = {eid: list(plan[eid][1]) for eid, _ in reqs}
    if reqs:
        return refine_with_closure(mesh, reqs, UnwantedPolicy.MINIMAL, child_orders)
    return None

# }}}


# {{{ fine mesh and reference data

def build_fine_mesh(mesh, marks: MarkSet):
    """Refine marked elements (h8, order + 1 capped at ``p_max``) in place."""
    reqs, child_orders = [], {}
    for eid in sorted(marks.ids):
        p = mesh[eid].order
        q = tuple(min(v + 1, mesh.p_max) for v in p)
        if q != tuple(v + 1 for v in p):
            log.debug("element %s: fine order capped at p_max=%d", eid, mesh.p_max)
        reqs.append((eid, RefFlag.H8))
        child_orders[eid] = [q] * 8
    return refine_with_closure(mesh, reqs, UnwantedPolicy.ISOTROPIC, child_orders)


def reference_tables(mesh, coarse_boxes: dict, fields: dict, p_max: int) -> dict:
    """Moment tables of the fine solution for each marked coarse element."""
    out = {}
    for eid, box in coarse_boxes.items():
        cells = [(mesh.box(f), fields[f]) for f in mesh.descendants(eid)]
        out[eid] = MomentTable.from_cells(box, cells, p_max)
    return out

# }}}


# {{{ driver

@dataclass
class Row:
    iter: int
    ndof_tot: int
    eta: float
    rel_l2_err: float | None
    seconds: float

    @property
    def cuberoot_ndof(self) -> float:
        return self.ndof_tot ** (1.0 / 3.0)


@dataclass
class AdaptResult:
    rows: list
    reason: str           # "converged", "budget", "stalled" or "time"
    mesh: object
    solution: object
    decisions: list = field(default_factory=list)   # per iteration list of Decision


ISO_ORDERS = {"iso-p2": 2, "iso-p3": 3, "iso-p4": 4}


def adapt_loop(problem, config, callback=None) -> AdaptResult:
    """Run the adaptive loop described by ``config``.

    ``config`` needs ``mode``, ``theta``, ``alpha``, ``dp``, ``p_max``,
    ``tol``, ``max_iter`` and ``max_dofs``; an optional ``max_seconds`` stops
    the loop (reason ``"time"``) once exceeded.  ``callback(iter, mesh, sol)``
    is called after every solve.
    """
    mode = config.mode.lower()
    mesh = problem.initial_mesh(config.p_max)
    if mode in ISO_ORDERS:
        p = min(ISO_ORDERS[mode], config.p_max)
        for eid in mesh.leaves:
            mesh.set_order(eid, (p, p, p))
    elif mode != "hp":
        raise ValueError(f"unknown mode {config.mode!r}")
    rows, decisions = [], []
    t0 = time.perf_counter()
    reason = "budget"
    sol = None
    for it in range(1, config.max_iter + 1):
        sol = solve_mesh(mesh, problem, config.dp, config.alpha, condense_interior=True)
        err = relative_error(sol, problem) if problem.exact is not None else None
        row = Row(it, sol.dofmap.ndof, sol.eta_total, err, time.perf_counter() - t0)
        rows.append(row)
        log.info("iter %d ndof %d eta %.4e err %s", it, row.ndof_tot, row.eta,
                 "-" if err is None else f"{err:.4e}")
        if callback is not None:
            callback(it, mesh, sol)
        if row.eta <= config.tol:
            reason = "converged"
            break
        if it == config.max_iter:
            break
        limit = getattr(config, "max_seconds", None)
        if limit is not None and row.seconds > limit:
            reason = "time"
            break
        marks = doerfler_mark(sol.eta, config.theta)
        if not marks.ids:
            reason = "converged"
            break
        snap = mesh.snapshot()
        if mode == "hp":
            plan, decs = _hp_step(mesh, problem, config, marks)
            decisions.append(decs)
            if not plan:
                reason = "stalled"
                break
            execute_plan(mesh, plan)
        else:
            refine_with_closure(mesh, [(e, RefFlag.H8) for e in sorted(marks.ids)],
                                UnwantedPolicy.ISOTROPIC)
        nxt = DofMap(mesh, problem, config.dp, config.alpha).ndof
        if nxt > config.max_dofs:
            unrefine(mesh, snap)
            log.info("next mesh has %d dofs > max_dofs=%d; stopping", nxt, config.max_dofs)
            break
    return AdaptResult(rows, reason, mesh, sol, decisions)


def _hp_step(mesh, problem, config, marks):
    snap = mesh.snapshot()
    starts = {e: mesh[e].order for e in marks.ids}
    boxes = {e: mesh.box(e) for e in marks.ids}
    build_fine_mesh(mesh, marks)
    ref = solve_mesh(mesh, problem, config.dp, config.alpha, condense_interior=True,
                     with_residual=False)
    tables = reference_tables(mesh, boxes, ref.fields, config.p_max)
    del ref
    unrefine(mesh, snap)
    decs = [compete(tables[e], e, starts[e], config.p_max) for e in sorted(marks.ids)]
    plan = select_and_invest(decs)
    return plan, [d for d in decs if d is not None]

# }}}
