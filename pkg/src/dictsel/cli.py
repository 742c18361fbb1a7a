"""Command-line entry point: ``dictsel <subcommand> --config run.json --out dir``.

Verbosity comes from the ``DICTSEL_LOG`` environment variable (a logging
level name such as ``INFO`` or ``DEBUG``; default ``WARNING``).  The exit
code is 0 on success, 2 for an invalid config and 1 when a stage fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import experiments
from .config import (ConfigError, IdentifyConfig, PdeConfig, ScreenConfig, SimulateConfig,
                     SweepConfig, load_config)

COMMANDS = {
    "simulate": (SimulateConfig, experiments.run_simulate),
    "identify": (IdentifyConfig, experiments.run_identify),
    "sweep": (SweepConfig, experiments.run_noise_sweep),
    "screen": (ScreenConfig, experiments.run_screening_study),
    "pde-identify": (PdeConfig, experiments.run_pde_identify),
}
# commands that accept --threads
PARALLEL = {"sweep", "screen", "pde-identify"}


def _apply_seed(raw: dict, command: str, seed: int) -> dict:
    raw = dict(raw)
    if command in ("simulate", "identify"):
        raw["noise"] = dict(raw.get("noise", {}), seed=seed)
    else:
        raw["base_seed"] = seed
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dictsel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the noise seed (base seed for replicate runs)")
        p.add_argument("--threads", type=int, default=1, help="parallel replicate workers")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("DICTSEL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    model, runner = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, model)
        if args.seed is not None:
            cfg = load_config(_apply_seed(cfg.model_dump(), args.command, args.seed), model)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 2
    kwargs = {"threads": args.threads} if args.command in PARALLEL else {}
    try:
        report = runner(cfg, args.out, **kwargs)
    except experiments.StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {len(report.manifest['files']) + 1} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
