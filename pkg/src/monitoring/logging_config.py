import logging
import sys

from pythonjsonlogger import jsonlogger

from src.errors import ConfigurationError

TEXT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def configure_logging(level: str = 'INFO', fmt: str = 'text') -> logging.Handler:
    """Install one stderr handler on the root logger; stdout stays free for summaries."""
    handler = logging.StreamHandler(sys.stderr)
    if fmt == 'json':
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    elif fmt == 'text':
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))
    else:
        raise ConfigurationError(f"Unknown log format: {fmt}")

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())
    return handler
