"""Command line entry point: ``qsg <experiment> --config <file>``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config
from .errors import CapacityError, DomainError, NumericError
from .experiments import run
from .parallel import set_default_workers

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_ASSERTION = 4
OUTPUT_ENV = "QSG_OUTPUT_DIR"

log = logging.getLogger("qsg")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="qsg",
        description="Finite-size numerical checks for quantum spin glasses.",
        epilog=f"Exit codes: 0 ok, 2 usage, 3 numeric failure, 4 a checked bound failed. "
               f"{OUTPUT_ENV} overrides the config output_dir; --out overrides both.",
    )
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="key = value config file (optional for ibp)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=_u64, help="override master_seed")
    p.add_argument("--workers", type=_positive, default=1, help="parallel replica workers")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> tuple:
    if args.config:
        cfg = load_config(args.config, args.experiment)
    else:
        cfg = ExperimentConfig(args.experiment).validate()
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = args.out or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    cfg.output_dir = out
    return cfg, out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="qsg: %(message)s")
    try:
        cfg, out = _resolve(args)
    except ConfigError as exc:
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"qsg: usage error: {exc}{field}", file=sys.stderr)
        return EXIT_USAGE
    set_default_workers(args.workers)
    try:
        status, rows = run(cfg, out)
    except (ConfigError, DomainError, CapacityError) as exc:
        print(f"qsg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"qsg: numeric failure (master_seed={cfg.master_seed}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    failed = [r for r in rows if r.holds is False]
    log.info("%d rows written to %s", len(rows), out)
    for r in failed:
        print(f"qsg: violated: {r.quantity} {r.case} value={r.value!r} bound={r.bound!r}",
              file=sys.stderr)
    return EXIT_ASSERTION if status != "ok" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
