import logging
from typing import Optional, get_type_hints

from moeaar_logger import ColorFormatter, get_formatter, get_logger, set_level


def test_formatter_of_colored_logger():
    log = get_logger("moeaar.tests.colored")
    formatter = get_formatter(log)
    assert isinstance(formatter, ColorFormatter)
    assert get_logger("moeaar.tests.colored") is log


def test_plain_logger_has_no_formatter():
    log = logging.getLogger("moeaar.tests.plain")
    log.addHandler(logging.NullHandler())
    assert get_formatter(log) is None


def test_formatter_may_be_absent():
    assert get_type_hints(get_formatter)["return"] == Optional[ColorFormatter]


def test_listeners_get_plain_text():
    log = get_logger("moeaar.tests.listener")
    received = []
    formatter = get_formatter(log)
    formatter.connect_log(received.append)
    try:
        log.warning("fit %d", 3)
    finally:
        formatter.disconnect_log(received.append)
    log.warning("not forwarded")
    assert received == [" [WARNING] fit 3"]


def test_set_level_reaches_handlers():
    log = get_logger("moeaar.tests.level")
    set_level(log, logging.DEBUG)
    assert log.level == logging.DEBUG
    assert all(handler.level == logging.DEBUG for handler in log.handlers)
