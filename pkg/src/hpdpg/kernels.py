"""Hot loops of the topology build, compiled with numba when available.

Set ``HPDPG_NO_NUMBA=1`` to force the vectorized numpy versions.  Both
paths return identical integer results.
"""
from __future__ import annotations

import os

import numpy as np

OFFSET = np.int64(1) << np.int64(40)


def _want_numba() -> bool:
    if os.environ.get("HPDPG_NO_NUMBA", "").strip() not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _want_numba()


# {{{ numpy

def sweep_tops_numpy(newline, starts, ends):
    """Row of the enclosing top interval for intervals sorted per line.

    Rows are grouped by line (``newline`` marks the first row of each group)
    and sorted by start, longer first on ties.  Intervals nest or are
    disjoint.
    """
    n = len(starts)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    line = np.cumsum(newline) - 1
    shifted = ends + line * OFFSET
    prevmax = np.maximum.accumulate(shifted)
    prev = np.empty(n, dtype=np.int64)
    prev[0] = -1
    prev[1:] = prevmax[:-1]
    is_top = newline | (starts + line * OFFSET >= prev)
    idx = np.where(is_top, np.arange(n), 0)
    return np.maximum.accumulate(idx)


def locate_numpy(lines, starts, ends, qline, qt):
    """Interval containing each query point strictly inside, or ``-1``.

    ``(lines, starts)`` must be sorted lexicographically; the intervals on
    a line are disjoint.
    """
    if len(lines) == 0:
        return np.full(len(qt), -1, dtype=np.int64)
    keys = lines * OFFSET + starts
    q = qline * OFFSET + qt
    i = np.searchsorted(keys, q, side="right") - 1
    ok = i >= 0
    j = np.where(ok, i, 0)
    ok &= (lines[j] == qline) & (starts[j] < qt) & (qt < ends[j])
    return np.where(ok, j, -1)

# }}}


# {{{ numba

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def sweep_tops(newline, starts, ends):
        n = starts.shape[0]
        out = np.empty(n, dtype=np.int64)
        cur = -1
        cur_end = 0
        for r in range(n):
            if newline[r] or starts[r] >= cur_end:
                cur = r
                cur_end = ends[r]
            out[r] = cur
        return out

    @njit(cache=True)
    def locate(lines, starts, ends, qline, qt):
        m = qt.shape[0]
        n = starts.shape[0]
        out = np.full(m, -1, dtype=np.int64)
        for k in range(m):
            lo, hi = 0, n
            # last row with (line, start) <= (qline, qt)
            while lo < hi:
                mid = (lo + hi) // 2
                if lines[mid] < qline[k] or (lines[mid] == qline[k] and starts[mid] <= qt[k]):
                    lo = mid + 1
                else:
                    hi = mid
            i = lo - 1
            if i >= 0 and lines[i] == qline[k] and starts[i] < qt[k] < ends[i]:
                out[k] = i
        return out

    return sweep_tops, locate


if USE_NUMBA:
    _sweep_nb, _locate_nb = _build_numba()

# }}}


def sweep_tops(newline, starts, ends):
    newline = np.ascontiguousarray(newline, dtype=np.bool_)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ends = np.ascontiguousarray(ends, dtype=np.int64)
    if USE_NUMBA:
        return _sweep_nb(newline, starts, ends)
    return sweep_tops_numpy(newline, starts, ends)


def locate(lines, starts, ends, qline, qt):
    args = [np.ascontiguousarray(a, dtype=np.int64) for a in (lines, starts, ends, qline, qt)]
    if USE_NUMBA:
        return _locate_nb(*args)
    return locate_numpy(*args)
