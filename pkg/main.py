#!/usr/bin/env python3

from typing import Optional, Sequence
import argparse
import logging

from drift_camouflage.cli import run
from drift_camouflage.config import COMMANDS, apply_overrides, load_config
from drift_camouflage.discrete import EnumerationBudgetError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

logger = logging.getLogger("drift_camouflage")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="drift-camouflage", description="Simulate and verify hidden-drift Brownian constructions")
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="Experiment to run (default: the config's 'command')")
    parser.add_argument("--config", "-c", default=".", help="Path to config file or directory (default: current directory)")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    parser.add_argument("--jobs", type=int, help="Worker processes (overrides the config)")
    parser.add_argument("--out", help="Output directory (overrides the config)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable debug logging")
    parser.add_argument(
        "--log-level",
        choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG", "NOTSET"],
        help="Set logging level (overrides --verbose)."
    )
    args = parser.parse_args(argv)

    # Configure logging early
    if args.log_level:
        level = getattr(logging, args.log_level)
    else:
        level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s:%(name)s:%(message)s")

    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, seed=args.seed, jobs=args.jobs, out=args.out)
        if args.command and args.command != cfg.command:
            raise ValueError(f"Command '{args.command}' does not match the config's '{cfg.command}'")
    except (ValueError, FileNotFoundError) as exc:
        logger.error("Config error: %s", exc)
        return EXIT_CONFIG

    try:
        result = run(cfg)
    except EnumerationBudgetError as exc:
        logger.error("Refusing exact enumeration of %d bits: %s", exc.bit_count, exc)
        return EXIT_CONFIG
    except Exception:
        logger.exception("Experiment '%s' failed", cfg.command)
        return EXIT_RUNTIME

    if not result.passed:
        logger.error("Experiment '%s' failed its acceptance checks, see %s", cfg.command, result.out_dir)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
