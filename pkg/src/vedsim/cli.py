"""Command line entry point: ``vedsim run | sweep | verify``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import VedsimError
from .verify import run_suites


def _values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vedsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate the configured rounds for one or more seeds")
    r.add_argument("--config", help="YAML experiment file (defaults used when omitted)")
    r.add_argument("--seed", type=int, help="run this single seed instead of the configured range")
    r.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed or run.first_seed")
    r.add_argument("--scheduler", choices=harness.SCHEDULERS)
    r.add_argument("--out", help="output directory")
    r.add_argument("--jobs", type=int, help="worker processes")
    r.add_argument("--slot-trace", action="store_true", help="also write slots.csv")

    s = sub.add_parser("sweep", help="vary one parameter and summarise each setting")
    s.add_argument("--config")
    s.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    s.add_argument("--values", required=True, type=_values, help="e.g. 0,5,10,25")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--first-seed", type=int, default=0)
    s.add_argument("--scheduler", choices=harness.SCHEDULERS)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--level", choices=("fast", "full"), default="fast")
    v.add_argument("--seed", type=int, default=0)
    return ap


def _config(args):
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    if getattr(args, "scheduler", None):
        cfg = harness.override(cfg, "run", "scheduler", args.scheduler)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            results = run_suites(args.level, args.seed)
            for res in results:
                print(res.line())
            return 0 if all(r.passed for r in results) else 1
        cfg = _config(args)
        if args.command == "run":
            first = cfg.run.first_seed if args.seed is None else args.seed
            n = args.seeds if args.seeds is not None else (1 if args.seed is not None else cfg.run.seeds)
            paths = harness.run(cfg, args.out, range(first, first + n), args.jobs,
                                True if args.slot_trace else None)
            for p in paths.values():
                print(p)
            return 0
        seeds = range(args.first_seed, args.first_seed + args.seeds)
        rows = harness.sweep(cfg, args.axis, args.values, seeds, args.out, args.jobs)
        for row in rows:
            print(f"{args.axis}={row['value']:g}  successes={row['mean_successes']:.2f}  "
                  f"energy={row['mean_total_energy']:.4f} J  violating={row['violating_seed_share']:.2f}")
        return 0
    except (VedsimError, OSError) as exc:
        print(f"vedsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
