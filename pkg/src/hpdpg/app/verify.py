"""Acceptance suites behind ``hpdpg verify``.

Each suite returns a list of :class:`Check` records and writes them,
together with any convergence history, to ``<out>/<suite>.json``.
"""
from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .. import dpg, oracles
from ..adapt import ISO_ORDERS, MomentTable, adapt_loop, compete, doerfler_mark
from ..mesh import Mesh, RefFlag, UnwantedPolicy, refine_with_closure, unrefine
from ..problems import make_problem
from ..solve import DofMap, assemble_global, element_matrices, recover_fields, residuals, \
    solve_spd

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    data: dict = field(default_factory=dict)


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b), initial=0.0) / max(np.max(np.abs(b), initial=0.0), 1e-300))


def desk_config(**kw):
    base = dict(mode="hp", theta=0.75, alpha=1.0, dp=1, p_max=6, tol=1e-12, max_iter=200,
                max_dofs=100_000, max_seconds=None)
    base.update(kw)
    return SimpleNamespace(**base)


# {{{ exactness

def exactness_checks(p_max: int = 6):
    out = []
    for deg in range(p_max):
        prob = make_problem("poly_sanity", degree=deg, p_max=p_max)
        t0 = time.perf_counter()
        res = adapt_loop(prob, desk_config(p_max=p_max, tol=1e-8, max_iter=1))
        dt = time.perf_counter() - t0
        row = res.rows[0]
        ok = (len(res.rows) == 1 and row.rel_l2_err < 1e-9 and row.eta < 1e-8 and dt < 10.0)
        out.append(Check(f"exactness degree {deg}", ok,
                         f"err {row.rel_l2_err:.2e} eta {row.eta:.2e} {dt:.2f}s",
                         {"err": row.rel_l2_err, "eta": row.eta, "seconds": dt}))
    return out

# }}}


# {{{ dense element oracle

def _random_box(rng):
    lo = rng.uniform(-1, 1, 3)
    return np.ravel(np.column_stack([lo, lo + rng.uniform(0.05, 1.5, 3)]))


def _poly_source(X):
    # low degree so that both quadratures integrate the load exactly
    return 1.0 + X[:, 0] - 2.0 * X[:, 1] * X[:, 2] + X[:, 0] ** 2


def gram_checks(seed: int = 0, n_elements: int = 20, tol: float = 1e-11):
    rng = np.random.default_rng(seed)
    worst = {"G": 0.0, "B": 0.0, "Bhat": 0.0, "l": 0.0, "K": 0.0, "r": 0.0, "lGl": 0.0}

    src = _poly_source

    for _ in range(n_elements):
        order = tuple(int(v) for v in rng.integers(1, 5, 3))
        box = _random_box(rng)
        eps = float(rng.uniform(0.05, 2.0))
        beta = tuple(rng.normal(size=3)) if rng.random() < 0.7 else (0.0, 0.0, 0.0)
        alpha = float(rng.uniform(0.2, 3.0))
        prob = SimpleNamespace(eps_d=eps, beta=beta, source=src)
        sys = dpg.assemble_element(box, order, prob, alpha=alpha)
        G, B, Bh, l = oracles.dense_element(box, order, 1, eps, beta, alpha, src)
        for k, a, b in (("G", sys.G, G), ("B", sys.B, B), ("Bhat", sys.Bhat, Bh), ("l", sys.l, l)):
            worst[k] = max(worst[k], _rel(a, b))
        ce = dpg.condense(sys)
        K, r, c = oracles.dense_condensed(G, B, Bh, l)
        worst["K"] = max(worst["K"], _rel(ce.stiffness, K))
        worst["r"] = max(worst["r"], _rel(ce.rhs, r))
        worst["lGl"] = max(worst["lGl"], _rel(ce.lGl, c))
    out = [Check(f"dense oracle {k}", v <= tol, f"max rel diff {v:.2e}", {"rel": v})
           for k, v in worst.items()]
    out += mesh_oracle_checks(rng, tol)
    return out


def _hanging_mesh(rng):
    m = Mesh.box_grid((2, 1, 1), order=(2, 2, 2), p_max=4)
    refine_with_closure(m, [(m.leaves[0], RefFlag(int(rng.integers(1, 8))))])
    for e in m.leaves:
        m.set_order(e, tuple(int(v) for v in rng.integers(1, 4, 3)))
    return m


def mesh_oracle_checks(rng, tol):
    """Condensed element systems and residuals on meshes with hanging traces."""
    wK = wS = wEta = 0.0
    for trial in range(3):
        mesh = _hanging_mesh(rng)
        prob = dataclasses.replace(
            make_problem("eriksson_johnson" if trial % 2 else "boundary_layer",
                         eps=float(rng.uniform(0.1, 0.5))), source=_poly_source)
        dm = DofMap(mesh, prob, condense_interior=True)
        system = assemble_global(dm)
        sol = recover_fields(system, solve_spd(system.A, system.b))
        eta = residuals(system, sol)
        for data in system.elements:
            eid = data.eid
            box = mesh.box(eid)
            G, B, _, l = oracles.dense_element(box, mesh[eid].order, 1, prob.eps_d, prob.beta,
                                               1.0, prob.source)
            Bh, _ = dpg.trace_matrix(dpg.ElementSpace(mesh[eid].order, 1), mesh.extents(eid),
                                     dm.traces.element_traces(eid), prob.eps_d, prob.beta)
            K, r, _ = oracles.dense_condensed(G, B, Bh, l)
            Kp, rp, _, nf, _, _ = element_matrices(dm, eid)
            wK = max(wK, _rel(Kp, K), _rel(rp, r))
            Ks, rs = oracles.schur(K, r, nf)
            wS = max(wS, _rel(data.K, Ks), _rel(data.r, rs))
            xf = sol.fields[eid].ravel()
            xt = sol.trace[data.trace_cols]
            res = l - B @ xf - Bh @ xt
            ref = float(res @ np.linalg.solve(G, res))
            scale = max(ref, 1e-300)
            wEta = max(wEta, abs(eta[eid] - ref) / scale)
    return [Check("mesh oracle condensed K", wK <= tol, f"max rel diff {wK:.2e}", {"rel": wK}),
            Check("mesh oracle interior Schur", wS <= tol, f"max rel diff {wS:.2e}", {"rel": wS}),
            Check("mesh oracle residual", wEta <= tol, f"max rel diff {wEta:.2e}",
                  {"rel": wEta})]

# }}}


# {{{ marking

def doerfler_checks(seed: int = 0, n_vectors: int = 1000):
    rng = np.random.default_rng(seed)
    bad = []
    for t in range(n_vectors):
        n = int(rng.integers(1, 11))
        if t % 4 == 0:
            vals = rng.integers(0, 4, n).astype(float)   # ties and zeros
        else:
            vals = rng.exponential(size=n) ** 2
        eta = {int(k): float(v) for k, v in zip(rng.permutation(50)[:n], vals)}
        theta = float(rng.uniform(0.05, 1.0)) if t % 10 else 1.0
        got = doerfler_mark(eta, theta).ids
        k, subsets = oracles.doerfler_bruteforce(eta, theta)
        if sum(eta.values()) == 0:
            ok = len(got) == 0
        else:
            ok = len(got) == k and tuple(sorted(got)) in {tuple(sorted(s)) for s in subsets}
        if not ok:
            bad.append({"eta": eta, "theta": theta, "got": sorted(got), "k": k})
    return [Check("doerfler minimal set", not bad,
                  f"{n_vectors - len(bad)}/{n_vectors} agree", {"failures": bad[:5]})]

# }}}


# {{{ refinement competition

def _leg_eval(coef, box, X):
    """Piecewise data: ``coef`` (ncomp, a, b, c) of ``P_a P_b P_c / jac`` on ``box``."""
    box = np.asarray(box, dtype=float)
    lo, h = box[0::2], box[1::2] - box[0::2]
    t = (X - lo) / h
    vals = [oracles._leg(coef.shape[1 + d], t[:, d]) for d in range(3)]
    return np.einsum("nabc,ai,bi,ci->ni", coef, *vals) / np.prod(h)


def random_reference(rng, p_max):
    """Random piecewise polynomial on the eight octants of a random box."""
    box = _random_box(rng)
    lo, h = box[0::2], box[1::2] - box[0::2]
    q = p_max + 1
    decay = rng.uniform(0.2, 1.5, 3)
    k = np.arange(q)
    env = np.exp(-(decay[0] * k[:, None, None] + decay[1] * k[None, :, None]
                   + decay[2] * k[None, None, :]))
    cells = []
    for c in range(8):
        ix = [(c >> d) & 1 for d in range(3)]
        cb = np.ravel([[lo[d] + 0.5 * h[d] * ix[d], lo[d] + 0.5 * h[d] * (ix[d] + 1)]
                       for d in range(3)])
        coef = rng.normal(size=(4, q, q, q)) * env * rng.uniform(0.1, 1.0)
        cells.append((cb, coef))
    return box, cells


def _flag_children(flag):
    axes = flag.axes
    kids = []
    for c in range(flag.nchildren):
        idx, bit = [], 0
        for d in range(3):
            if d in axes:
                idx.append((c >> bit) & 1)
                bit += 1
            else:
                idx.append(2)
        kids.append(tuple(idx))
    return kids


def compete_checks(seed: int = 0, n_functions: int = 50, p_max: int = 3, tol: float = 1e-9):
    rng = np.random.default_rng(seed)
    flags = list(RefFlag)
    bad, strict_gain = [], 0
    for t in range(n_functions):
        box, cells = random_reference(rng, p_max)
        lo, h = box[0::2], box[1::2] - box[0::2]

        def func(X, cells=cells):
            out = np.zeros((4, len(X)))
            for cb, coef in cells:
                m = np.all((X >= cb[0::2]) & (X <= cb[1::2]), axis=1)
                if m.any():
                    out[:, m] = _leg_eval(coef, cb, X[m])
            return out

        proj = oracles.ProjectionOracle(func, npts=p_max + 3)

        @functools.lru_cache(maxsize=None)
        def errfn(sub, order, lo=lo, h=h, cells=cells, proj=proj):
            iv = [(0.0, 0.5), (0.5, 1.0), (0.0, 1.0)]
            sb = np.ravel([[lo[d] + h[d] * iv[sub[d]][0], lo[d] + h[d] * iv[sub[d]][1]]
                           for d in range(3)])
            pieces = []
            for cb, _ in cells:
                if np.all(cb[0::2] >= sb[0::2] - 1e-14) and np.all(cb[1::2] <= sb[1::2] + 1e-14):
                    pieces.append(cb)
            return max(proj.err2(sb, order, pieces), 0.0)

        start = tuple(int(v) for v in rng.integers(1, p_max + 1, 3))
        table = MomentTable.from_cells(box, cells, p_max)
        dec = compete(table, t, start, p_max)
        got = {c.flag: c.rate for c in dec.candidates} if dec else {}
        ref = oracles.exhaustive_compete(errfn, start, p_max, [int(f) for f in flags],
                                         {int(f): _flag_children(f) for f in flags})
        finite = [v for v in ref.values() if math.isfinite(v)]
        scale = max([abs(v) for v in finite], default=1.0)
        ref_best = max(ref.values())
        for f in flags:
            r0 = ref[int(f)]
            r1 = got.get(f, -math.inf) if dec else None
            if dec is None:
                continue
            if math.isfinite(r0) != math.isfinite(r1) or (
                    math.isfinite(r0) and abs(r0 - r1) > tol * scale):
                if math.isfinite(r0) and math.isfinite(r1) and r1 < r0:
                    strict_gain += 1   # a tie branch the greedy rule did not take
                bad.append({"t": t, "flag": f.name, "got": r1, "ref": r0})
        if dec is None and ref_best > 0 and math.isfinite(ref_best):
            bad.append({"t": t, "flag": "winner", "got": None, "ref": ref_best})
        if dec is not None:
            ref_flag = max(flags, key=lambda f: (ref[int(f)], -int(f)))
            if abs(ref[int(ref_flag)] - dec.rate) > tol * scale:
                bad.append({"t": t, "flag": "winner", "got": dec.winner.flag.name,
                            "ref": ref_flag.name})
    return [Check("compete vs exhaustive", not bad,
                  f"{len(bad)} mismatches over {n_functions} functions, p_max={p_max}, "
                  f"{strict_gain} from unexplored ties",
                  {"failures": bad[:10]})]

# }}}


# {{{ mesh audits

def _random_requests(rng, mesh):
    L = mesh.leaves
    k = int(rng.integers(1, 4))
    pick = rng.choice(L, size=min(k, len(L)), replace=False)
    return [(int(e), RefFlag(int(rng.integers(1, 8)))) for e in pick]


def closure_checks(seed: int = 0, n_sequences: int = 500, max_leaves: int = 250):
    rng = np.random.default_rng(seed)
    bad = []
    for seq in range(n_sequences):
        n = tuple(int(v) for v in rng.integers(1, 3, 3))
        mesh = Mesh.box_grid(n, p_max=4)
        vol = float(np.prod(n))
        for step in range(int(rng.integers(1, 6))):
            if len(mesh.leaves) > max_leaves:
                break
            pol = UnwantedPolicy.MINIMAL if rng.random() < 0.5 else UnwantedPolicy.ISOTROPIC
            refine_with_closure(mesh, _random_requests(rng, mesh), pol)
            v = oracles.irregularity_violations(mesh)
            if v or abs(mesh.volume() - vol) > 1e-12 * vol:
                bad.append({"sequence": seq, "step": step, "violations": v[:3]})
                break
    return [Check("closure one-irregularity audit", not bad,
                  f"{n_sequences - len(bad)}/{n_sequences} sequences clean",
                  {"failures": bad[:5]})]


def unrefine_checks(seed: int = 0, n_cycles: int = 100):
    rng = np.random.default_rng(seed)
    bad = 0
    mesh = Mesh.box_grid((2, 1, 1), p_max=5)
    for cyc in range(n_cycles):
        if len(mesh.leaves) > 150:
            mesh = Mesh.box_grid((1, 2, 1), p_max=5)
        before = mesh.serialize()
        snap = mesh.snapshot()
        reqs = _random_requests(rng, mesh)
        orders = {e: [tuple(int(v) for v in rng.integers(1, 6, 3))] * f.nchildren
                  for e, f in reqs if rng.random() < 0.5}
        pol = UnwantedPolicy.MINIMAL if rng.random() < 0.5 else UnwantedPolicy.ISOTROPIC
        refine_with_closure(mesh, reqs, pol, orders)
        for e in mesh.leaves[:3]:
            mesh.set_order(e, (1, 2, 3))
        unrefine(mesh, snap)
        if mesh.serialize() != before or mesh.topology.closure_violations():
            bad += 1
        # grow the base mesh for the next cycle
        refine_with_closure(mesh, _random_requests(rng, mesh)[:1], pol)
    return [Check("unrefine roundtrip", bad == 0, f"{n_cycles - bad}/{n_cycles} exact")]

# }}}


# {{{ desk-scale runs

def _run(problem, **kw):
    cfg = desk_config(**kw)
    t0 = time.perf_counter()
    res = adapt_loop(problem, cfg)
    return res, time.perf_counter() - t0


def _history(res):
    return [[r.iter, r.ndof_tot, r.eta, r.rel_l2_err, r.seconds] for r in res.rows]


def dofs_at_error(rows, target):
    """First ndof whose error is at or below ``target`` (log-linear interpolation)."""
    prev = None
    for r in rows:
        if r.rel_l2_err is not None and r.rel_l2_err <= target:
            if prev is None:
                return float(r.ndof_tot)
            e0, e1 = math.log(prev.rel_l2_err), math.log(r.rel_l2_err)
            s = (math.log(target) - e0) / (e1 - e0)
            return float(prev.ndof_tot + s * (r.ndof_tot - prev.ndof_tot))
        prev = r
    return None


def cuberoot_correlation(rows):
    """Correlation of ``log(err)`` with ``ndof^(1/3)`` over the last two thirds."""
    tail = rows[len(rows) // 3:]
    x = np.array([r.cuberoot_ndof for r in tail])
    y = np.log([r.rel_l2_err for r in tail])
    if len(tail) < 3 or np.ptp(x) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def layer_statistics(mesh, face_x=1.0):
    """Aspect ratios and orders of leaves touching the plane ``x = face_x``."""
    asp, px, py = [], [], []
    for e in mesh.leaves:
        b = mesh.box(e)
        if abs(b[1] - face_x) > 1e-12:
            continue
        ext = b[1::2] - b[0::2]
        asp.append(ext[0] / min(ext[1], ext[2]))
        px.append(mesh[e].order[0])
        py.append(mesh[e].order[1])
    return np.array(asp), np.array(px), np.array(py)


def rate_bookkeeping(decisions):
    """Mismatches between stored rates and rates recomputed from the path states."""
    bad = total = 0
    for step in decisions:
        for dec in step:
            for c in dec.candidates:
                total += 1
                best = -math.inf
                for st in c.path:
                    if st.dofs > c.dofs_old and st.err2 < c.err_old:
                        best = max(best, (c.err_old - st.err2) / (st.dofs - c.dofs_old))
                if best != c.rate:
                    bad += 1
            if dec.rate != dec.winner.rate:
                bad += 1
    return bad, total


def boundary_layer_checks(eps=0.05, max_dofs=30_000, max_seconds=840.0, iso=True):
    prob = make_problem("boundary_layer", eps=eps)
    hp, t_hp = _run(prob, max_dofs=max_dofs, max_seconds=max_seconds)
    last = hp.rows[-1]
    n_hp = dofs_at_error(hp.rows, 1e-3)
    out = []
    data = {"hp": _history(hp), "hp_reason": hp.reason, "hp_seconds": t_hp}
    if iso:
        # the comparison only needs iso-p2 up to five times the hp cost
        need = 5 * (n_hp if n_hp is not None else last.ndof_tot)
        isor, t_iso = _run(prob, mode="iso-p2", max_dofs=int(need) + 1,
                           max_seconds=max_seconds)
        n_iso = dofs_at_error(isor.rows, 1e-3)
        bound = n_iso if n_iso is not None else float(isor.rows[-1].ndof_tot)
        data.update(iso=_history(isor), iso_seconds=t_iso)
        at_hp = dofs_at_error(isor.rows, last.rel_l2_err)
        ok = n_hp is not None and bound >= 5 * n_hp and t_hp < 900
        detail = (f"hp err {last.rel_l2_err:.2e} at {last.ndof_tot} dofs in {t_hp:.0f}s; "
                  f"hp dofs at 1e-3: {n_hp}; iso-p2 dofs at 1e-3 "
                  f"{'>= ' if n_iso is None else ''}{bound:.0f}; iso-p2 dofs at the final hp "
                  f"error: {'>' + str(isor.rows[-1].ndof_tot) if at_hp is None else f'{at_hp:.0f}'}")
        out.append(Check("boundary layer hp vs iso-p2", ok, detail))
    rho = cuberoot_correlation(hp.rows)
    out.append(Check("exponential convergence signature", rho <= -0.97,
                     f"correlation {rho:.4f} over {len(hp.rows) - len(hp.rows) // 3} iterations"))
    asp, px, py = layer_statistics(hp.mesh)
    ok = len(asp) > 0 and np.median(asp) <= 0.25 and np.median(px) >= np.median(py)
    out.append(Check("anisotropy at the layer", bool(ok),
                     f"{len(asp)} leaves; median aspect {np.median(asp):.3f}, "
                     f"median px {np.median(px)}, median py {np.median(py)}"))
    bad, total = rate_bookkeeping(hp.decisions)
    out.append(Check("rate bookkeeping", bad == 0 and total > 0,
                     f"{total - bad}/{total} candidate rates reproduced bitwise"))
    out[0].data = data
    return out


def _monotone(vals, allowed=1):
    ups = sum(1 for a, b in zip(vals, vals[1:]) if b > a)
    return ups <= allowed, ups


def eriksson_johnson_checks(eps=0.1, max_dofs=40_000, max_seconds=840.0):
    prob = make_problem("eriksson_johnson", eps=eps)
    res, t = _run(prob, max_dofs=max_dofs, max_seconds=max_seconds)
    eta_ok, eta_up = _monotone([r.eta for r in res.rows])
    err_ok, err_up = _monotone([r.rel_l2_err for r in res.rows])
    last = res.rows[-1]
    ok = eta_ok and err_ok and last.rel_l2_err <= 1e-3 and last.ndof_tot <= max_dofs \
        and t < 900
    return [Check("eriksson-johnson convergence", ok,
                  f"final err {last.rel_l2_err:.2e} eta {last.eta:.2e} at {last.ndof_tot} dofs "
                  f"in {t:.0f}s; increases: eta {eta_up}, err {err_up}",
                  {"history": _history(res), "reason": res.reason})]


def corner_edge(mesh, corner=(0.0, 0.0, 0.0)):
    """Smallest edge length among leaves whose closure contains ``corner``."""
    c = np.asarray(corner)
    best = math.inf
    for e in mesh.leaves:
        b = mesh.box(e)
        if np.all(b[0::2] <= c + 1e-12) and np.all(c - 1e-12 <= b[1::2]):
            best = min(best, float(np.min(b[1::2] - b[0::2])))
    return best


def fichera_checks(max_dofs=60_000, max_seconds=840.0):
    prob = make_problem("fichera")
    res, t = _run(prob, max_dofs=max_dofs, max_seconds=max_seconds)
    drop = res.rows[0].eta / res.rows[-1].eta
    h0 = prob.cell / prob.initial_split
    hmin = corner_edge(res.mesh)
    last = res.rows[-1]
    return [Check("fichera residual drop", drop >= 10 and last.ndof_tot <= max_dofs,
                  f"eta {res.rows[0].eta:.3e} -> {last.eta:.3e} ({drop:.1f}x) at "
                  f"{last.ndof_tot} dofs in {t:.0f}s", {"history": _history(res)}),
            Check("fichera corner grading", hmin <= h0 / 16,
                  f"smallest corner edge {hmin:.4g} vs initial {h0:.4g}")]

# }}}


def oracle_checks(seed: int = 0):
    out = []
    for fn in (gram_checks, doerfler_checks, compete_checks, closure_checks, unrefine_checks):
        t0 = time.perf_counter()
        res = fn(seed)
        dt = time.perf_counter() - t0
        for c in res:
            c.data["seconds"] = dt
            if dt >= 120:
                c.passed = False
                c.detail += f" (took {dt:.0f}s, limit 120s)"
        out += res
    return out


SUITES = {
    "exactness": exactness_checks,
    "oracles": oracle_checks,
    "boundary_layer": boundary_layer_checks,
    "eriksson_johnson": eriksson_johnson_checks,
    "fichera": fichera_checks,
}


def run_suite(name: str, out: Path) -> bool:
    checks = SUITES[name]()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}.json", "w") as fh:
        json.dump([asdict(c) for c in checks], fh, indent=1, default=str)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return all(c.passed for c in checks)
