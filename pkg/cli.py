# cli.py

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from loguru import logger

from config import config
from handlers import boundary, experiment, finitetemp, meanfield, susceptibility
from middlewares.errors import guard
from utils.constants import EXIT_CONFIG, PROJECT, VERSION
from utils.schema import ConfigError, build_run_config

COMMANDS = {
    "meanfield": meanfield,
    "boundary": boundary,
    "experiment": experiment,
    "susceptibility": susceptibility,
    "finitetemp": finitetemp,
}


# =====================================================
# LOGGING
# =====================================================

def setup_logging(level: Optional[str] = None):
    logger.remove()
    logger.add(sys.stderr, level=level or config.LOG_LEVEL)

    if config.LOG_TO_FILE:
        config.LOGS_DIR.mkdir(parents=True, exist_ok=True)
        logger.add(
            str(config.LOGS_DIR / "cavity.log"),
            rotation="5 MB",
            retention="10 days",
            compression="zip",
            level=level or config.LOG_LEVEL,
        )


# =====================================================
# PARSER
# =====================================================

def _add_common(parser: argparse.ArgumentParser, command: str):
    parser.add_argument("--config", type=Path, help="JSON run configuration (flags take precedence)")
    parser.add_argument("--seed", type=int, help="top-level RNG seed")
    parser.add_argument("--output", dest="output_path", type=Path,
                        help=f"output file (default {config.OUTPUT_DIR}/{command}.csv)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--log-level", dest="log_level", help="override CAVITY_LOG_LEVEL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROJECT, description="Cavity mean-field solver for sparse recovery")
    parser.add_argument("--version", action="version", version=f"{PROJECT} {VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, module in COMMANDS.items():
        sub = module.register(subparsers)
        _add_common(sub, name)

    return parser


def _flags(args: argparse.Namespace, command: str) -> dict:
    module = COMMANDS[command]
    flags = {name: getattr(args, name, None) for name in module.PARAMETER_FLAGS}
    flags.update(seed=args.seed, output_path=args.output_path, format=args.format)
    return flags


# =====================================================
# MAIN
# =====================================================

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        config.validate()
        flags = _flags(args, args.command)
        suffix = ".json" if flags["format"] == "json" else ".csv"
        default_output = config.OUTPUT_DIR / f"{args.command}{suffix}"
        run_config = build_run_config(args.command, flags, args.config, default_output)
    except (ConfigError, ValueError) as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG

    logger.info(f"🚀 {args.command} seed={run_config.seed} config_hash={run_config.config_hash()}")
    return guard(COMMANDS[args.command].run, run_config)


if __name__ == "__main__":
    sys.exit(main())
