"""``robustlmg`` command line.

Exit codes: 0 success, 2 configuration or input error, 3 numerical-validation failure.
"""
from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, NumericalValidationError, ValidationError
from .config import MODES, build_config, load_file
from .experiment import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustlmg", description="Robust linear Markov game experiments.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=_u64, help="single seed; replaces the config's seed list")
        p.add_argument("--out", help="output directory")
        p.add_argument("--sweep", action="append", default=[], metavar="KEY=v1,v2,...")
        p.add_argument("--sweep-mode", choices=("product", "zip"))
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one parameter")
        p.add_argument("--game", help="game JSON file (overrides the generator spec)")
        if mode == "eval":
            p.add_argument("--mixture", help="policy mixture JSON to score")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        doc = load_file(args.config) if args.config else {}
        cfg = build_config(
            args.mode, doc, seed=args.seed, out=args.out, sweeps=args.sweep, sets=args.set,
            sweep_mode=args.sweep_mode, mixture=getattr(args, "mixture", None), game_path=args.game,
        )
        rows = run_experiment(cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalValidationError as exc:
        print(f"numerical validation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TypeError as exc:
        print(f"error: bad parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(rows)} result rows to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
