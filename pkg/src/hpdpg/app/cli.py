"""``hpdpg run`` and ``hpdpg verify``.

Exit status: 0 tolerance met, 3 iteration or dof budget exhausted,
4 no further refinement possible, 2 configuration error, 1 solver or
other runtime failure, 5 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from ..adapt import adapt_loop
from ..problems import make_problem
from .config import MODES, ConfigError, load_config
from .vtk import export_vtk

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_STALLED = 4
EXIT_VERIFY = 5
REASON_EXIT = {"converged": EXIT_OK, "budget": EXIT_BUDGET, "stalled": EXIT_STALLED,
               "time": EXIT_BUDGET}

CSV_COLUMNS = ("iter", "ndof_tot", "eta", "rel_l2_err", "seconds")

log = logging.getLogger("hpdpg")


def _limit_threads():
    n = os.environ.get("HPDPG_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def write_csv(path, rows, timing=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            err = "" if r.rel_l2_err is None else repr(float(r.rel_l2_err))
            sec = f"{r.seconds:.3f}" if timing else ""
            w.writerow([r.iter, r.ndof_tot, repr(float(r.eta)), err, sec])


def run(cfg) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = make_problem(cfg.problem, eps=cfg.eps, degree=cfg.degree, variant=cfg.variant,
                           p_max=cfg.p_max)

    def dump(it, mesh, sol):
        if cfg.vtk:
            export_vtk(out / f"mesh_{it:03d}.vtu", mesh, sol.fields, sol.eta)

    res = adapt_loop(problem, cfg, callback=dump)
    write_csv(out / "convergence.csv", res.rows, cfg.timing)
    last = res.rows[-1]
    summary = {
        "problem": cfg.problem,
        "mode": cfg.mode,
        "reason": res.reason,
        "iterations": len(res.rows),
        "ndof": last.ndof_tot,
        "eta": last.eta,
        "rel_l2_err": last.rel_l2_err,
        "leaves": len(res.mesh.leaves),
    }
    if cfg.timing:
        summary["seconds"] = last.seconds
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("%s after %d iterations: ndof %d eta %.3e", res.reason, len(res.rows),
             last.ndof_tot, last.eta)
    return REASON_EXIT[res.reason]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hpdpg")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an adaptive computation")
    r.add_argument("--config", required=True)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--out")
    v = sub.add_parser("verify", help="run an acceptance suite")
    v.add_argument("--suite", required=True)
    v.add_argument("--out", default="verify_out")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        if args.cmd == "run":
            try:
                cfg = load_config(args.config, mode=args.mode, out=args.out)
            except ConfigError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            try:
                return run(cfg)
            except Exception as exc:  # report, do not dump a traceback on users
                log.debug("run failed", exc_info=True)
                print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
                return EXIT_ERROR
        from .verify import SUITES, run_suite
        if args.suite not in SUITES:
            print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}",
                  file=sys.stderr)
            return EXIT_CONFIG
        ok = run_suite(args.suite, Path(args.out))
        return EXIT_OK if ok else EXIT_VERIFY
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
