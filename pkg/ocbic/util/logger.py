import inspect
import logging
import sys
from typing import Any

from loguru import logger

from ocbic.core.config import config


class LoguruHandler(logging.Handler):
    def emit(self, record: logging.LogRecord) -> None:
        level: str | int
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno

        # report the caller of the logging call, not the logging module itself
        frame, depth = inspect.currentframe(), 0
        while frame is not None and (depth == 0 or frame.f_code.co_filename == logging.__file__):
            frame = frame.f_back
            depth += 1

        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def _filter_min_level(record: dict) -> bool:
    minimum = logger.level('DEBUG' if config.DEV_ENV else 'INFO').no
    return record['level'].no >= minimum


def init_logger() -> None:
    # numpy/scipy/pandas report through `warnings`
    logging.basicConfig(handlers=[LoguruHandler()], level=logging.WARNING, force=True)
    logging.captureWarnings(capture=True)

    fmt = (
        '<level>{time}</level> | <level>{level: <8}</level> | '
        '<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - '
        '<level>{message}</level>'
    )

    logger.remove()

    # stdout carries command output (TSV/JSON)
    handler: Any = {'sink': sys.stderr, 'format': fmt, 'filter': _filter_min_level}
    logger.configure(handlers=[handler])


init_logger()
