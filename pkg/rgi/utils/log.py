"""Console logging setup."""

import logging
import sys

LOG_FORMAT = "[rgi] %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity: int = 0) -> None:
    """Configure the root rgi logger; -1 quiet, 0 info, 1+ debug."""
    if verbosity < 0:
        level = logging.WARNING
    elif verbosity == 0:
        level = logging.INFO
    else:
        level = logging.DEBUG

    logger = logging.getLogger("rgi")
    logger.setLevel(level)
    logger.handlers = []
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.propagate = False


def progress_enabled() -> bool:
    return logging.getLogger("rgi").getEffectiveLevel() <= logging.INFO
