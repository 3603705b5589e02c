import numpy as np
import pytest
from hypothesis import given, strategies as st

from hpdpg import kernels

nb = pytest.importorskip("numba")
sweep_nb, locate_nb = kernels._build_numba()


def _intervals(rng, n):
    line = np.sort(rng.integers(0, 5, n))
    lev = rng.integers(0, 5, n)
    size = np.int64(1) << (6 - lev)
    start = (rng.integers(0, 64, n) // size) * size
    end = start + size
    o = np.lexsort((-end, start, line))
    line, start, end = line[o], start[o], end[o]
    newline = np.ones(n, dtype=bool)
    newline[1:] = line[1:] != line[:-1]
    return line, start, end, newline


@given(st.integers(0, 2**31 - 1), st.integers(1, 200))
def test_backends_agree(seed, n):
    rng = np.random.default_rng(seed)
    line, start, end, newline = _intervals(rng, n)
    a = kernels.sweep_tops_numpy(newline, start, end)
    assert np.array_equal(a, sweep_nb(newline, start, end))
    tops = np.unique(a)
    q = rng.integers(0, n, 50)
    qline, qt = line[q], start[q] + rng.integers(-2, 70, 50)
    args = (line[tops], start[tops], end[tops], qline, qt)
    got = kernels.locate_numpy(*args)
    assert np.array_equal(got, locate_nb(*args))
    # brute force
    for k in range(50):
        hit = [i for i in range(len(tops)) if args[0][i] == qline[k]
               and args[1][i] < qt[k] < args[2][i]]
        assert (hit[0] if hit else -1) == got[k]


def test_tops_brute_force():
    rng = np.random.default_rng(3)
    line, start, end, newline = _intervals(rng, 300)
    tops = kernels.sweep_tops_numpy(newline, start, end)
    for r in range(300):
        t = tops[r]
        assert line[t] == line[r] and start[t] <= start[r] and end[r] <= end[t]
        # the top is not itself inside another interval of the line
        enclosing = [i for i in range(300) if line[i] == line[t] and start[i] <= start[t]
                     and end[t] <= end[i] and (end[i] - start[i]) > (end[t] - start[t])]
        assert not enclosing
