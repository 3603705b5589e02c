import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpdpg import oracles
from hpdpg.adapt import (CandidateResult, Decision, MomentTable, PathState, adapt_loop,
                         build_fine_mesh, compete, doerfler_mark, h_path_search,
                         p_path_search, select_and_invest, sub_index)
from hpdpg.app.verify import compete_checks, random_reference
from hpdpg.mesh import Mesh, RefFlag
from hpdpg.oracles import irregularity_violations
from hpdpg.problems import make_problem
from hpdpg.spaces import gauss, l2_project

# {{{ marking


def test_doerfler_examples():
    eta = {0: 9.0, 1: 4.0, 2: 1.0, 3: 1.0, 4: 1.0}
    assert doerfler_mark(eta, 0.75).ids == [0]
    assert sorted(doerfler_mark({0: 1.0, 1: 0.0, 2: 2.0}, 1.0).ids) == [0, 2]
    assert doerfler_mark({5: 0.3}, 0.5).ids == [5]
    assert doerfler_mark({1: 0.0, 2: 0.0}, 0.5).ids == []
    with pytest.raises(ValueError):
        doerfler_mark({1: -1.0}, 0.5)
    with pytest.raises(ValueError):
        doerfler_mark({1: 1.0}, 1.5)


@given(st.dictionaries(st.integers(0, 99), st.floats(0.0, 10.0), min_size=1, max_size=9),
       st.floats(0.01, 1.0))
def test_doerfler_minimal(eta, theta):
    got = doerfler_mark(eta, theta).ids
    total = sum(eta.values())
    if total == 0:
        assert got == []
        return
    k, subsets = oracles.doerfler_bruteforce(eta, theta)
    assert len(got) == k
    covered = sum(eta[i] for i in got)
    assert covered >= theta * theta * total * (1 - 1e-12)
    # removing any element breaks the coverage (strictly, up to rounding)
    for i in got:
        assert covered - eta[i] < theta * theta * total * (1 + 1e-12)

# }}}


# {{{ reference tables

def table_from(func, p_max=4, q=6, box=(0, 1, 0, 1, 0, 1)):
    """Moment table of ``func`` projected octant-wise at ``q`` modes."""
    box = np.asarray(box, dtype=float)
    lo, h = box[0::2], box[1::2] - box[0::2]
    n = q + 4
    s, _ = gauss(n)
    cells = []
    for c in range(8):
        ix = [(c >> d) & 1 for d in range(3)]
        cb = np.ravel([[lo[d] + 0.5 * h[d] * ix[d], lo[d] + 0.5 * h[d] * (ix[d] + 1)]
                       for d in range(3)])
        clo, ch = cb[0::2], cb[1::2] - cb[0::2]
        X = np.stack(np.meshgrid(*[clo[d] + ch[d] * s for d in range(3)], indexing="ij"),
                     axis=-1)
        F = func(X.reshape(-1, 3))
        coef = np.stack([l2_project(F[k].reshape(n, n, n), (q, q, q), extents=ch)[0]
                         for k in range(4)])
        cells.append((cb, coef))
    return MomentTable.from_cells(box, cells, p_max), cells


def scalar(f):
    def func(X):
        out = np.zeros((4, len(X)))
        out[0] = f(X)
        return out
    return func


@given(st.integers(0, 2**31 - 1))
def test_table_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    p_max = 3
    box, cells = random_reference(rng, p_max)
    table = MomentTable.from_cells(box, cells, p_max)
    lo, h = box[0::2], box[1::2] - box[0::2]

    def func(X):
        out = np.zeros((4, len(X)))
        for cb, coef in cells:
            m = np.all((X >= cb[0::2]) & (X <= cb[1::2]), axis=1)
            t = (X[m] - cb[0::2]) / (cb[1::2] - cb[0::2])
            P = [oracles._leg(coef.shape[1 + d], t[:, d]) for d in range(3)]
            out[:, m] = np.einsum("nabc,ai,bi,ci->ni", coef, *P) / np.prod(cb[1::2] - cb[0::2])
        return out

    proj = oracles.ProjectionOracle(func, npts=p_max + 3)
    iv = [(0.0, 0.5), (0.5, 1.0), (0.0, 1.0)]
    for _ in range(5):
        sub = tuple(int(v) for v in rng.integers(0, 3, 3))
        order = tuple(int(v) for v in rng.integers(1, p_max + 1, 3))
        sb = np.ravel([[lo[d] + h[d] * iv[sub[d]][0], lo[d] + h[d] * iv[sub[d]][1]]
                       for d in range(3)])
        pieces = [cb for cb, _ in cells
                  if np.all(cb[0::2] >= sb[0::2] - 1e-14) and np.all(cb[1::2] <= sb[1::2] + 1e-14)]
        ref = proj.err2(sb, order, pieces)
        assert abs(table.err2(sub, order) - max(ref, 0.0)) < 1e-10 * max(table.normsq.max(), 1)


def test_reference_consistency():
    """The fine function projected on its own cell space has no error."""
    rng = np.random.default_rng(2)
    box, cells = random_reference(rng, 3)
    table = MomentTable.from_cells(box, cells, 4)
    for sub in [(0, 0, 0), (1, 0, 1), (1, 1, 1)]:
        assert table.err2(sub, (4, 4, 4)) <= 1e-12 * table.normsq[sub]


def test_sub_index():
    assert sub_index(RefFlag.H2_X) == [(0, 2, 2), (1, 2, 2)]
    assert sub_index(RefFlag.H4_YZ) == [(2, 0, 0), (2, 1, 0), (2, 0, 1), (2, 1, 1)]
    assert len(sub_index(RefFlag.H8)) == 8

# }}}


# {{{ candidates

def test_p_path_separation():
    from numpy.polynomial import legendre as L
    # degree two in x is just above order (2, 2, 2)
    table, _ = table_from(scalar(lambda X: L.legval(2 * X[:, 0] - 1, [0, 0, 1.0])), p_max=4)
    cand = p_path_search(table, (2, 2, 2), 4)
    first = cand.path[1].orders[0]
    assert first == (3, 2, 2)
    e0 = table.err2((2, 2, 2), (2, 2, 2))
    assert abs(e0 - 1.0 / 5.0) < 1e-12
    # rate equals squared coefficient over added dofs, best of the 7 increment subsets
    assert cand.rate == pytest.approx(e0 / (4 * (12 - 8)), rel=1e-12)
    best = 0.0
    for inc in range(1, 8):
        q = tuple(2 + ((inc >> d) & 1) for d in range(3))
        e = table.err2((2, 2, 2), q)
        best = max(best, (e0 - e) / (4 * (np.prod(q) - 8)))
    assert cand.rate == pytest.approx(best, rel=1e-12)


def test_constant_is_zero_gain():
    table, _ = table_from(scalar(lambda X: 0 * X[:, 0] + 2.0), p_max=3)
    assert compete(table, 0, (2, 2, 2), 3) is None
    assert p_path_search(table, (3, 3, 3), 3).rate == -math.inf


def test_midplane_jump_prefers_h2x():
    table, _ = table_from(scalar(lambda X: np.where(X[:, 0] < 0.5, 1.0, 2.0)), p_max=4)
    r = {f: h_path_search(table, (2, 2, 2), f, 4) for f in
         (RefFlag.H2_X, RefFlag.H2_Y, RefFlag.H2_Z)}
    assert r[RefFlag.H2_X].err_new < 1e-12
    assert r[RefFlag.H2_X].rate > r[RefFlag.H2_Y].rate
    assert r[RefFlag.H2_X].rate > r[RefFlag.H2_Z].rate
    assert compete(table, 0, (2, 2, 2), 4).winner.flag is RefFlag.H2_X


@pytest.mark.parametrize("f,start", [
    (lambda X: X[:, 0] ** 2, (1, 1, 1)),
    (lambda X: X[:, 0] ** 2, (2, 2, 2)),
    (lambda X: np.exp(X[:, 0] + X[:, 1] + X[:, 2]), (2, 2, 2)),
    (lambda X: np.exp(X[:, 0] + X[:, 1] + X[:, 2]), (3, 3, 3)),
])
def test_smooth_prefers_p(f, start):
    table, _ = table_from(scalar(f), p_max=5)
    dec = compete(table, 0, start, 5)
    assert dec.winner.flag is RefFlag.NONE
    assert all(dec.rate >= c.rate for c in dec.candidates)


def test_resolved_function_is_skipped():
    table, _ = table_from(scalar(lambda X: (X[:, 0] * X[:, 1] * X[:, 2]) ** 2), p_max=5)
    assert compete(table, 0, (3, 3, 3), 5) is None


def test_point_feature_prefers_h8_over_h2():
    f = scalar(lambda X: np.exp(-np.sum((X - 0.5) ** 2, axis=1) / 0.01))
    table, _ = table_from(f, p_max=4, q=7)
    h8 = h_path_search(table, (2, 2, 2), RefFlag.H8, 4).rate
    for flag in (RefFlag.H2_X, RefFlag.H2_Y, RefFlag.H2_Z):
        assert h8 >= h_path_search(table, (2, 2, 2), flag, 4).rate


def test_graded_layer_pattern():
    """1D analogue: a layer at x = 1 gives a high order only in the layer child."""
    eps = 0.03
    f = scalar(lambda X: np.exp((X[:, 0] - 1.0) / eps))
    table, _ = table_from(f, p_max=6, q=9)
    c = h_path_search(table, (2, 1, 1), RefFlag.H2_X, 6)
    (left, right) = c.suborders
    assert right[0] > left[0]
    assert right[1:] == (1, 1) or right[0] >= 4


@given(st.integers(0, 2**31 - 1))
def test_path_invariants(seed):
    rng = np.random.default_rng(seed)
    box, cells = random_reference(rng, 3)
    table = MomentTable.from_cells(box, cells, 3)
    start = tuple(int(v) for v in rng.integers(1, 4, 3))
    dec = compete(table, 0, start, 3)
    if dec is None:
        return
    assert dec.rate == max(c.rate for c in dec.candidates)
    for c in dec.candidates:
        dofs = [s.dofs for s in c.path]
        errs = [s.err2 for s in c.path]
        assert all(b > a for a, b in zip(dofs, dofs[1:]))
        if c.flag is RefFlag.NONE:
            assert all(b <= a + 1e-15 for a, b in zip(errs, errs[1:]))
        if c.viable:
            assert c.dofs_new > c.dofs_old
            assert c.rate == (c.err_old - c.err_new) / (c.dofs_new - c.dofs_old)


def test_compete_matches_exhaustive_small():
    for c in compete_checks(seed=11, n_functions=6):
        assert c.passed, c.data

# }}}


# {{{ selection

def _decision(eid, rates, flag=RefFlag.H2_X):
    """Winner whose path has the given rates relative to (err 100, dofs 10)."""
    path, err, dofs = [PathState(((1, 1, 1),), 10, 100.0)], 100.0, 10
    for k, r in enumerate(rates):
        dofs = 10 + 10 * (k + 1)
        err = 100.0 - r * (dofs - 10)
        path.append(PathState(((k + 2, 1, 1),), dofs, err))
    c = CandidateResult(flag, path[1].orders, -math.inf, path, 10, 100.0)
    for st in path:
        r = c.state_rate(st)
        if r > c.rate:
            c.rate, c.suborders, c.dofs_new, c.err_new = r, st.orders, st.dofs, st.err2
    return Decision(eid, c, c.rate, [c])


def test_select_threshold():
    plan = select_and_invest([_decision(1, [10]), _decision(2, [3]), _decision(3, [2])])
    assert sorted(plan) == [1, 2]


def test_invest_walks_path():
    # rates relative to the coarse element: 10, 6, 2.4 against threshold 2.5
    d = _decision(1, [10.0, 6.0, 2.4])
    assert [round(d.winner.state_rate(s), 12) for s in d.winner.path[1:]] == [10.0, 6.0, 2.4]
    plan = select_and_invest([d])
    assert plan[1] == (RefFlag.H2_X, d.winner.path[2].orders)


def test_single_decision_always_selected():
    d = _decision(4, [1e-9])
    assert 4 in select_and_invest([d, None])

# }}}


# {{{ fine mesh and loop

def test_fine_mesh():
    m = Mesh.box_grid(order=(2, 3, 2), p_max=3)
    e = m.leaves[0]
    build_fine_mesh(m, SimpleNamespace(ids=[e]))
    assert len(m.leaves) == 8
    assert all(m[c].order == (3, 3, 3) for c in m.leaves)
    m = Mesh.box_grid((2, 1, 1), order=(2, 2, 2), p_max=6)
    build_fine_mesh(m, SimpleNamespace(ids=[m.leaves[0]]))
    build_fine_mesh(m, SimpleNamespace(ids=[m.leaves[1]]))
    assert irregularity_violations(m) == []


def test_loop_exact_terminates():
    prob = make_problem("poly_sanity", degree=2)
    cfg = SimpleNamespace(mode="hp", theta=0.75, alpha=1.0, dp=1, p_max=6, tol=1e-8,
                          max_iter=5, max_dofs=10_000)
    res = adapt_loop(prob, cfg)
    assert len(res.rows) == 1 and res.reason == "converged"
    assert res.rows[0].eta < 1e-8


@pytest.mark.parametrize("mode", ["hp", "iso-p2"])
def test_loop_structure(mode):
    prob = make_problem("boundary_layer", eps=0.1)
    cfg = SimpleNamespace(mode=mode, theta=0.75, alpha=1.0, dp=1, p_max=4, tol=1e-12,
                          max_iter=4, max_dofs=4000)
    res = adapt_loop(prob, cfg)
    nd = [r.ndof_tot for r in res.rows]
    assert all(b > a for a, b in zip(nd, nd[1:]))
    assert all(r.eta >= 0 for r in res.rows)
    assert res.reason in ("budget", "stalled")
    assert irregularity_violations(res.mesh) == []

# }}}
