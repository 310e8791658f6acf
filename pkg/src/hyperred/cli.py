"""Command-line entry point: ``hyperred <phase> <config.json> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import harness
from .fom import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def build_parser():
    p = argparse.ArgumentParser(prog="hyperred", description="Hyper-reduced ROM benchmark pipeline")
    p.add_argument("phase", choices=["offline", "merge", "online", "report", "pareto"])
    p.add_argument("config", help="experiment JSON file")
    p.add_argument("--method", choices=harness.ALL_METHODS, help="restrict to one method")
    p.add_argument("--er", type=float, help="target residual energy exponent E_r")
    p.add_argument("--nsr", type=int, help="number of sampled force rows n_f")
    p.add_argument("--eqp-tol", type=float, help="NNLS relative residual tolerance")
    p.add_argument("--maxnnls", type=int, help="cap on EQP support points")
    p.add_argument("--nwin", type=int, help="number of time windows")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args):
    return {
        "methods": [args.method] if args.method else None,
        "er": [args.er] if args.er is not None else None,
        "n_f": args.nsr,
        "eqp_tol": args.eqp_tol,
        "maxnnls": args.maxnnls,
        "nwin": args.nwin,
    }


def run(args):
    cfg = harness.load_config(args.config, _overrides(args))
    if args.phase == "offline":
        manifest = harness.cmd_offline(cfg)
        for r in manifest["runs"]:
            print(f"mu={r['mu']:g}: {r['snapshots']} snapshots, FOM loop {r['fom_wall_time']:.3f} s")
    elif args.phase == "merge":
        for path in harness.cmd_merge(cfg):
            print(path)
    elif args.phase == "online":
        for r in harness.cmd_online(cfg):
            print(f"{r.tag}: error={r.combined_error:.3e} rel_time={r.relative_online_time:.3f} "
                  f"n_points={r.n_points} r_y={r.r_y}")
    elif args.phase == "report":
        for name, path in harness.cmd_report(cfg).items():
            print(f"{name}: {path}")
    else:
        pset = harness.cmd_pareto(cfg)
        for r in pset.front_records():
            print(f"{r.tag}: rel_time={r.relative_online_time:.3f} error={r.combined_error:.3e}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        run(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
