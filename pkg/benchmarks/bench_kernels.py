"""Compare the numba and numpy versions of the topology kernels.

    python3 benchmarks/bench_kernels.py [--n 2000000]

Also times a full topology build on a refined mesh under both settings
(each in a subprocess, since HPDPG_NO_NUMBA is read at import).
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from hpdpg import kernels


def nested_intervals(n, rng):
    """Sorted (line, start, end) rows where intervals on a line nest or are disjoint."""
    nline = max(n // 64, 1)
    line = np.sort(rng.integers(0, nline, n))
    lev = rng.integers(0, 10, n)
    size = np.int64(1) << (20 - lev)
    start = rng.integers(0, 1 << 10, n) * (np.int64(1) << 10)
    start = (start // size) * size
    end = start + size
    order = np.lexsort((-end, start, line))
    line, start, end = line[order], start[order], end[order]
    newline = np.ones(n, dtype=bool)
    newline[1:] = line[1:] != line[:-1]
    return line, start, end, newline


def best_of(fn, reps=5):
    fn()
    best = np.inf
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def kernel_timings(n):
    rng = np.random.default_rng(0)
    line, start, end, newline = nested_intervals(n, rng)
    q = rng.integers(0, len(line), n)
    qline, qt = line[q], start[q] + rng.integers(0, 1 << 9, n)
    res = {}
    tops_np = kernels.sweep_tops_numpy(newline, start, end)
    res["sweep numpy"] = best_of(lambda: kernels.sweep_tops_numpy(newline, start, end))
    tops = np.unique(tops_np)
    args = (line[tops], start[tops], end[tops], qline, qt)
    loc_np = kernels.locate_numpy(*args)
    res["locate numpy"] = best_of(lambda: kernels.locate_numpy(*args))
    try:
        sweep_nb, locate_nb = kernels._build_numba()
    except ImportError:
        return res
    assert np.array_equal(sweep_nb(newline, start, end), tops_np)
    assert np.array_equal(locate_nb(*args), loc_np)
    res["sweep numba"] = best_of(lambda: sweep_nb(newline, start, end))
    res["locate numba"] = best_of(lambda: locate_nb(*args))
    return res


TOPO_SNIPPET = """
import time
from hpdpg.mesh import Mesh, RefFlag, refine_with_closure
m = Mesh.box_grid((4, 4, 4))
for _ in range(3):
    refine_with_closure(m, [(e, RefFlag.H8) for e in m.leaves[::3]])
m.topology
t = time.perf_counter()
for _ in range(3):
    m._bump()
    m.topology
print(len(m.leaves), (time.perf_counter() - t) / 3)
"""


def topology_timing(no_numba):
    env = dict(os.environ, HPDPG_NO_NUMBA="1" if no_numba else "0")
    out = subprocess.run([sys.executable, "-c", TOPO_SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return int(out[0]), float(out[1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=2_000_000)
    args = ap.parse_args()
    res = kernel_timings(args.n)
    print(f"kernels on {args.n:,} rows")
    for k in sorted(res):
        print(f"  {k:14s} {res[k] * 1e3:9.2f} ms")
    for name in ("sweep", "locate"):
        if f"{name} numba" in res:
            print(f"  {name} speedup {res[f'{name} numpy'] / res[f'{name} numba']:.1f}x")
    n, t_nb = topology_timing(False)
    _, t_np = topology_timing(True)
    print(f"topology build, {n} leaves: numba {t_nb:.3f}s  numpy {t_np:.3f}s")


if __name__ == "__main__":
    main()
