"""Command line interface.

``lrfwi invert --config exp.cfg [--pipeline joint] [--keep 0.15]
[--seed 7] [--out results/]`` runs an experiment; the bare ``invert``
console script is an alias for the subcommand.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, LrfwiError
from .experiment import PIPELINES, load_config, run_experiment


def _add_invert_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument(
        "--pipeline", choices=PIPELINES + ("both",), help="pipeline(s) to run"
    )
    parser.add_argument("--keep", type=float, help="observed-entry ratio in (0, 1]")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")


def _run_invert(args) -> int:
    overrides = {
        "pipeline": args.pipeline,
        "keep": args.keep,
        "seed": args.seed,
        "out": args.out,
    }
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_experiment(cfg)
    if result.code != 0:
        print(f"error: {result.message}", file=sys.stderr)
        return result.code
    for name, summary in result.summaries.items():
        print(
            f"{name}: model_error={summary.model_error:.6g} "
            f"pde_solves={summary.pde_total}"
        )
    print(f"artifacts written to {result.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lrfwi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    invert = sub.add_parser("invert", help="run an inversion experiment")
    _add_invert_args(invert)
    args = parser.parse_args(argv)
    if args.command == "invert":
        return _run_invert(args)
    parser.error(f"unknown command {args.command!r}")
    return 2


def invert_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="invert", description=__doc__)
    _add_invert_args(parser)
    return _run_invert(parser.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
