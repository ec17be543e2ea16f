"""``precisionkit run <experiment> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time
from pathlib import Path

from ..errors import ConfigError
from .config import ALIASES, EXPERIMENTS, load_config
from .experiments import run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="precisionkit", description="Run a seeded experiment and write CSV outputs.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("experiment", choices=list(EXPERIMENTS) + sorted(ALIASES), metavar="EXPERIMENT",
                     help="one of: " + ", ".join(EXPERIMENTS) + " (short forms: " + ", ".join(sorted(ALIASES)) + ")")
    run.add_argument("--config", type=Path, help="YAML or JSON settings file")
    run.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument("--workers", type=int, help="parallel worker processes (outputs do not depend on this)")
    return parser


def _check_writable(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=out):
            pass
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror or exc}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = load_config(args.experiment, args.config, args.seed, args.out, args.workers)
        _check_writable(cfg.out)
    except ConfigError as exc:
        print(f"precisionkit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"precisionkit: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any crash is reported as a failed run
        print(f"precisionkit: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for s in result.summaries:
        print(f"{cfg.experiment} seed={s.seed} wall={s.wall_seconds:.2f}s", file=sys.stderr)
    for f in result.files:
        print(os.fspath(f))
    print(f"{cfg.experiment}: {len(result.summaries)} seed(s) in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
