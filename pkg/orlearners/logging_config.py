"""
Logging configuration.
One human-readable line per record on stdout; the level comes from settings
unless given explicitly.
"""
import logging
import sys

from orlearners.config import get_settings

LOG_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# per-request access lines from the server and worker start-up chatter from joblib
QUIET_LOGGERS = ("uvicorn.access", "joblib")


def setup_logging(level: str | None = None) -> None:
    """
    Configure root logging.

    Called once by the CLI and by the prediction service; library code only
    asks for named loggers. Calling it again replaces the stdout handler.
    """
    settings = get_settings()

    root_logger = logging.getLogger()
    root_logger.setLevel((level or settings.log_level).upper())
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
    root_logger.addHandler(console_handler)

    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
