"""Logging configuration for the pretraining stack."""

import sys
from pathlib import Path
from typing import Callable, Optional

from loguru import logger

from .config import settings

METRICS_CHANNEL = "metrics"


def _not_metrics(record: dict) -> bool:
    return record["extra"].get("channel") != METRICS_CHANNEL


def setup_logging(level: Optional[str] = None) -> None:
    """Configure application logging using loguru."""
    level = level or settings.log_level

    # Remove default handler
    logger.remove()

    # Console handler with color formatting
    log_format = (
        "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
        "<level>{message}</level>"
    )

    logger.add(sys.stderr, format=log_format, level=level, colorize=True, filter=_not_metrics, backtrace=True, diagnose=False)

    # File handler if log file is specified
    if settings.log_file:
        log_file_path = Path(settings.log_file)
        log_file_path.parent.mkdir(parents=True, exist_ok=True)

        # File format without colors
        file_format = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} | {message}"

        logger.add(
            log_file_path,
            format=file_format,
            level=level,
            filter=_not_metrics,
            rotation="10 MB",
            retention="1 week",
            compression="zip",
            backtrace=True,
            diagnose=False,
        )

    logger.debug(f"Logging configured - Level: {level}")
    if settings.log_file:
        logger.debug(f"Log file: {settings.log_file}")


def add_metrics_sink(path: Path) -> int:
    """Route ``channel=metrics`` records, message only, to ``path``. Returns the sink id."""
    path.parent.mkdir(parents=True, exist_ok=True)
    only_metrics: Callable[[dict], bool] = lambda record: record["extra"].get("channel") == METRICS_CHANNEL
    return logger.add(path, format="{message}", level="INFO", filter=only_metrics, mode="a", enqueue=False)


def metrics_logger() -> "logger":
    """Logger bound to the metrics channel."""
    return logger.bind(channel=METRICS_CHANNEL)
