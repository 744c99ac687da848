import logging
from logging import CRITICAL, ERROR, WARNING, INFO, DEBUG  # noqa: F401


_FORMAT = "%(asctime)s:%(name)s:%(levelname)s:%(message)s"

handler = logging.StreamHandler()
handler.setFormatter(logging.Formatter(_FORMAT))
logger = logging.getLogger('scrloc')
logger.handlers.clear()
logger.setLevel(logging.INFO)
logger.addHandler(handler)


def get_logger(name: str) -> logging.Logger:
    """Return a child of the package logger, e.g. ``get_logger('detect')``."""

    if not name.startswith('scrloc'):
        name = f'scrloc.{name}'
    return logging.getLogger(name)


def set_verbosity(level: int) -> None:
    logger.setLevel(level)
