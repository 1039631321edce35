"""Logging configuration for the Source Value engine."""

import sys
from loguru import logger
from sourcevalue.config import settings


def _is_progress(record) -> bool:
    return bool(record["extra"].get("progress"))


def setup_logger(level: str | None = None):
    """Configure application logger with loguru.

    Diagnostics go to stderr. Records bound with ``progress=True`` are
    human-readable progress lines and go to stdout only.
    """
    level = (level or settings.log_level).upper()

    # Remove default handler
    logger.remove()

    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level,
        colorize=True,
        filter=lambda record: not _is_progress(record),
    )

    logger.add(
        sys.stdout,
        format="{message}",
        level="INFO",
        colorize=False,
        filter=_is_progress,
    )

    if settings.log_file:
        logger.add(
            settings.log_file,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level=level,
            rotation="10 MB",
            retention="7 days",
            compression="zip",
        )

    return logger


# Initialize logger
app_logger = setup_logger()
progress_logger = app_logger.bind(progress=True)
