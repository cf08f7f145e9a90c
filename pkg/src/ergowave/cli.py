"""Command line entry point.

    ergowave <experiment> [--config FILE] [--set key=value ...]
             [--out DIR] [--strict]

Experiments: validate, simulate, couple, lyapunov, mixing, ratekit-check.
Flags override config-file keys; unknown keys are rejected by name.  Exit
status is 0 on success and on report-only violations, nonzero on errors or,
under --strict, on any violation.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .experiments import EXPERIMENTS, run_experiment

USAGE_ERROR = 2
VIOLATION_ERROR = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergowave",
        description="Spectral simulator and ergodicity verification harness "
                    "for the velocity-damped stochastic wave equation.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", default=None, metavar="FILE",
                       help="flat key-value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override one configuration key")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="artifact directory (default: ./runs/<experiment>)")
        p.add_argument("--strict", action="store_true",
                       help="exit nonzero on report-only violations")
        p.add_argument("--quiet", action="store_true", help="suppress the summary")
        if name == "mixing":
            p.add_argument("--n", type=int, default=None,
                           help="shortcut for --set mixing.n=N")
            p.add_argument("--gamma", type=float, default=None,
                           help="shortcut for --set mixing.gamma=G")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = list(args.overrides)
    if getattr(args, "n", None) is not None:
        overrides.append(f"mixing.n={args.n}")
    if getattr(args, "gamma", None) is not None:
        overrides.append(f"mixing.gamma={args.gamma}")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return USAGE_ERROR

    out_dir = args.out or f"runs/{args.experiment}"
    try:
        manifest, violations, lines = run_experiment(args.experiment, cfg, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    if not args.quiet:
        for line in lines:
            print(line)
        for v in violations:
            print(f"violation: {v}")
        print(f"artifacts in {out_dir} "
              f"({', '.join(sorted(manifest.artifacts)) or 'none'})")
    if violations and args.strict:
        return VIOLATION_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
