import logging
import sys
from typing import List, Optional

# Import configuration and logging setup
from src.config import app_config
from src.particle_tracer.utils.logging_config import setup_logging

from src.particle_tracer.commands import build_parser, run_threads

# Import exceptions for mapping failures to exit codes
from src.particle_tracer.exceptions import (
    CameraError, ComposeError, ConfigError, ContractViolationError, ImageFormatError, MeshFormatError,
    NumericalError, SceneFormatError,
)

# Get a logger for the main module
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parses the command line, runs one command and returns its exit code.

    Exit codes: 0 ok, 1 usage or configuration error, 2 I/O or file-format error,
    3 numerical failure.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage; --help exits 0
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    # --- Setup Logging ---
    level_name = (args.log_level or app_config.log_level).upper()
    level = logging.getLevelName(level_name)
    if not isinstance(level, int):
        print(f"Error: unknown log level {args.log_level!r}", file=sys.stderr)
        return EXIT_USAGE
    setup_logging(log_level=level, log_file=app_config.log_file)
    logger.info(f"Configuration loaded: {app_config}")

    try:
        threads = run_threads(args, app_config.threads)
        seed = args.seed if args.seed is not None else app_config.seed
        if app_config.deterministic:
            threads = 1
        logger.info(f"Running '{args.command}' with {threads} worker(s), seed {seed}.")
        return args.handler(args, threads, seed)
    except (ConfigError, CameraError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneFormatError, MeshFormatError, ImageFormatError, ComposeError, OSError) as e:
        logger.error(f"I/O error: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ContractViolationError) as e:
        logger.exception(f"Numerical failure: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
