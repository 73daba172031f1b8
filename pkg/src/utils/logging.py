import logging
from collections import deque
from datetime import datetime

from src import config

MAX_MESSAGES = 100

_logger = logging.getLogger("channelfold")
_debug_info = deque(maxlen=MAX_MESSAGES)


def configure_logging(level=None):
    """Attach a plain-text stderr handler to the channelfold logger"""
    level = level or config.LOG_LEVEL
    if not _logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        _logger.addHandler(handler)
        _logger.propagate = False
    _logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def _record(message, level):
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    debug_message = f"[{timestamp}] {message}"

    # Keep only the last MAX_MESSAGES messages
    _debug_info.append(debug_message)
    _logger.log(level, debug_message)


def log_debug(message):
    """Log debug message to the in-memory buffer and the channelfold logger"""
    _record(message, logging.DEBUG)


def log_info(message):
    """Log progress message"""
    _record(message, logging.INFO)


def clear_debug_log():
    """Clear debug log"""
    _debug_info.clear()


def get_debug_log():
    """Get debug log"""
    return list(_debug_info)
