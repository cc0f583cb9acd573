"""
Logging setup for the confidence lab
Plain text logs by default; structured JSON logs through python-json-logger on request
"""

import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

TEXT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'


def configure_logging(level: str = "INFO", json_format: bool = False, stream: Optional[object] = None) -> logging.Logger:
    """Replace root handlers with one stderr handler in the requested format"""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    if json_format:
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
    root.addHandler(handler)
    root.setLevel(level.upper())
    return root
