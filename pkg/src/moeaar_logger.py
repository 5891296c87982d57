"""
Module for getting a preconfigured default logger with prettier formatting,
color coding, and listener forwarding.
"""

import logging
from typing import Callable, Optional

from colorama import Fore


class ColorFormatter(logging.Formatter):
    """
    logging.Formatter which sets color coding for logger messages.
    Also forwards each message to connected listeners (e.g. a run.log writer).
    """

    def __init__(self):
        super().__init__()
        self._listeners: list[Callable[[str], None]] = []

        # https://stackoverflow.com/a/56944256
        self.fmt = "%(levelname)10s %(message)s"
        self.colors = {
            logging.DEBUG: Fore.CYAN,
            logging.INFO: Fore.WHITE,
            logging.WARNING: Fore.LIGHTYELLOW_EX,
            logging.ERROR: Fore.RED,
            logging.CRITICAL: Fore.LIGHTRED_EX,
        }

    def format(self, record):
        """Apply color coding and forward the plain message to listeners."""
        color = self.colors.get(record.levelno, Fore.WHITE)
        formatter = logging.Formatter(color + self.fmt + Fore.RESET)
        result = formatter.format(record)
        plain = result[len(color) : -len(Fore.RESET)]  # Remove color characters
        for listener in list(self._listeners):
            listener(plain)
        return result

    def connect_log(self, listener: Callable[[str], None]) -> None:
        """Connect a callable receiving every formatted message."""
        self._listeners.append(listener)

    def disconnect_log(self, listener: Callable[[str], None]) -> None:
        if listener in self._listeners:
            self._listeners.remove(listener)


def get_logger(
    name: str = __name__,
    start_level: int = logging.INFO,
) -> logging.Logger:
    """
    Returns default logger with prettier formatting, color coding, and
    listener forwarding.
    """
    if logging.getLogger(name).hasHandlers():
        return logging.getLogger(name)

    # https://stackoverflow.com/a/60021304
    def fmt_filter(record):
        if not record.levelname.startswith("["):
            record.levelname = f"[{record.levelname}]"
        return True

    log = logging.getLogger(name)

    formatter = ColorFormatter()
    handler = logging.StreamHandler()
    handler.setFormatter(formatter)
    handler.addFilter(fmt_filter)
    log.setLevel(start_level)
    log.addHandler(handler)
    log.propagate = False

    return log


def get_formatter(log: logging.Logger) -> Optional[ColorFormatter]:
    """Return the ColorFormatter attached to a logger from get_logger."""
    for handler in log.handlers:
        if isinstance(handler.formatter, ColorFormatter):
            return handler.formatter
    return None


def set_level(log: logging.Logger, level: int) -> None:
    """Set level on the logger and all of its handlers."""
    log.setLevel(level)
    for handler in log.handlers:
        handler.setLevel(level)
