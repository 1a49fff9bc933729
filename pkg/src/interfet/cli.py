"""Command line entry point.

Exit status is 0 on success, 2 for configuration errors and 3 when a solver
or the Gummel iteration fails to converge.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from interfet.config import ConfigError
from interfet.io import load_config
from interfet.saddle import SolverError
from interfet.studies import COMPARE_GRID, run_compare, run_converge, run_solve, run_sweep, run_tables
from interfet.transport import TransportError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

COMMANDS = {
    "solve": lambda cfg, out, args: run_solve(cfg, out),
    "sweep": lambda cfg, out, args: run_sweep(cfg, out),
    "converge": lambda cfg, out, args: run_converge(cfg, out),
    "compare": lambda cfg, out, args: run_compare(cfg, out, iv=args.iv),
    "tables": lambda cfg, out, args: list(run_tables(cfg, out).values()),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="interfet",
        description="Interface-reduced Poisson / drift-diffusion solver for single-layer FETs.",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="INI-style config file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key; may be repeated")
    p.add_argument("--mode", choices=("dirichlet", "robin"), help="interface coupling mode")
    p.add_argument("--iv", action="store_true", help="compare: also sweep the I-V curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.mode:
        overrides.append(f"coupling_mode={args.mode}")
    try:
        defaults = COMPARE_GRID if args.command == "compare" else None
        cfg = load_config(args.config, overrides, defaults)
        args.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = COMMANDS[args.command](cfg, args.out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, SolverError) as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
