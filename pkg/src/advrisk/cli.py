"""Command-line entry point.

    advrisk predict|simulate|threshold|compare --config <file> --out <dir>
            [--workers N] [--seed S]

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 tolerance breach (compare only).  The environment variable
ADVRISK_QUAD_ORDER overrides the quadrature order for debugging.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import experiment
from .errors import ConfigError, SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TOLERANCE = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advrisk",
        description=(
            "Asymptotic standard/robust accuracy predictions for "
            "adversarially trained linear classifiers, with Monte-Carlo "
            "validation"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("predict", "theory sweep table"),
        ("simulate", "Monte-Carlo sweep table"),
        ("threshold", "separability thresholds per norm"),
        ("compare", "theory vs simulation with tolerance gate"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="INI configuration file")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument(
            "--workers",
            type=int,
            default=os.cpu_count() or 1,
            help="trial worker processes (default: available cores)",
        )
        cmd.add_argument("--seed", type=int, default=0, help="master seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = experiment.parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    name = f"{cfg.prefix}_{args.command}"
    try:
        if args.command == "predict":
            table = experiment.run_predict(cfg, seed=args.seed, workers=args.workers)
        elif args.command == "simulate":
            table = experiment.run_simulate(cfg, seed=args.seed, workers=args.workers)
        elif args.command == "threshold":
            table = experiment.run_threshold(cfg, seed=args.seed, workers=args.workers)
        else:
            table, summary, ok = experiment.run_compare(
                cfg, seed=args.seed, workers=args.workers
            )
            path = table.write(out_dir, name)
            print(path)
            print(json.dumps(summary, indent=2))
            return EXIT_OK if ok else EXIT_TOLERANCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    path = table.write(out_dir, name)
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
