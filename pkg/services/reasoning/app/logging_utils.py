"""Logging setup shared by the CLI, trainer and samplers."""

import logging
import os

_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Configure root logging once.

    Args:
        level: Level name; defaults to `KGR_LOG_LEVEL` or INFO.
    """
    name = (level or os.getenv("KGR_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=_FORMAT)


def get_logger(name: str) -> logging.Logger:
    """Return the module logger for `name`."""
    return logging.getLogger(name)
