"""
degenbeam command-line entry point.

    degenbeam <command> --config <path> --out <dir> [--seed N]
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import dotenv

from ..errors import ConfigError, DegenBeamError, OutOfScopeError
from ..models.config import load_config
from .commands import SCHEMA_VERSION, router, write_report

# Load environment variables
dotenv.load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_OUT_OF_SCOPE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degenbeam", description="Numerical laboratory for degenerate beams")
    parser.add_argument("command", choices=router.names, help="Command to run")
    parser.add_argument("--config", type=Path, required=True, help="JSON run configuration")
    parser.add_argument("--out", type=Path, default=Path(os.getenv("DEGENBEAM_OUTPUT_DIR", "out")),
                        help="Output directory (default: $DEGENBEAM_OUTPUT_DIR or ./out)")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        0 if every check passed, 1 on a failed check or error, 2 on config
        errors, 3 on out-of-scope parameters
    """
    logging.basicConfig(
        level=os.getenv("DEGENBEAM_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG

    try:
        outcome = router.run(args.command, config, args.out)
    except OutOfScopeError as e:
        logger.error(f"{args.command}: {e}")
        _write_error(args, config, e, EXIT_OUT_OF_SCOPE)
        return EXIT_OUT_OF_SCOPE
    except ConfigError as e:
        logger.error(f"{args.command}: {e}")
        _write_error(args, config, e, EXIT_CONFIG)
        return EXIT_CONFIG
    except (DegenBeamError, ValueError, OSError, IndexError) as e:
        logger.error(f"{args.command}: {e}")
        _write_error(args, config, e, EXIT_FAILED)
        return EXIT_FAILED

    failed = [name for name, ok in outcome.checks.items() if not ok]
    if failed:
        logger.error(f"{args.command}: failed checks {', '.join(failed)}")
        return EXIT_FAILED
    logger.info(f"{args.command}: all checks passed")
    return EXIT_OK


def _write_error(args, config, error: Exception, status: int):
    args.out.mkdir(parents=True, exist_ok=True)
    write_report(args.out / f"{args.command}.json", {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "config": config.model_dump(mode="json"),
        "error": str(error),
        "status": status,
        "passed": False,
    })


if __name__ == "__main__":
    sys.exit(main())
