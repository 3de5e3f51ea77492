"""Command line entry point.

Exit codes: 0 success, 1 user or configuration error, 2 backend unavailable,
3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Sequence

from .chains import exhaustive_cost_years
from .config import PipelineConfig
from .errors import BackendUnavailable, InvariantViolation, ScaChainError
from .pipeline import STAGES, Pipeline

logger = logging.getLogger("scachain")

EXIT_OK = 0
EXIT_USER = 1
EXIT_BACKEND = 2
EXIT_INTERNAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scachain", description="Specification-to-test-case pipeline.")
    parser.add_argument("command", choices=[*STAGES, "all"])
    parser.add_argument("-c", "--config", help="pipeline configuration file (JSON)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a configuration value, e.g. chains.mode=exhaustive (repeatable)",
    )
    parser.add_argument("--jobs", type=int, help="worker cap for every stage")
    parser.add_argument("--work-dir", help="artifact directory (overrides paths.work_dir)")
    parser.add_argument(
        "--project", type=int, action="append", default=[], metavar="N",
        help="with 'stats': also print the n-squared pair-cost estimate for N nodes",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    if args.work_dir is not None:
        overrides.append(f"paths.work_dir={json.dumps(args.work_dir)}")
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        summary = Pipeline(cfg).run(args.command)
    except BackendUnavailable as exc:
        print(f"error: backend unavailable: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (ScaChainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        logger.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

    if args.command == "stats" and args.project:
        spp = cfg.metrics.seconds_per_pair
        summary["projections"] = {str(n): round(exhaustive_cost_years(n, spp), 4) for n in args.project}
    unchecked = summary.get("analyze", {}).get("unchecked", 0)
    if unchecked:
        print(f"warning: {unchecked} oracle checks were unchecked", file=sys.stderr)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
