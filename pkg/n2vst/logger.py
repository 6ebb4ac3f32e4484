"""
n2vst.logger — Structured JSON logging.

One JSON object per line on stderr; stdout is reserved for command results.
Training progress (iteration, loss, lr) and the image/noise level a record is
about are top-level keys so traces can be filtered with jq; everything else
goes under "data".
"""

import json
import logging
import math
import sys
from datetime import datetime, timezone
from typing import Any

from n2vst.config import LogLevel

# Keys lifted out of "data" into the top level of a record.
TOP_LEVEL_FIELDS = ("iteration", "loss", "lr", "image", "lam")

_LEVELS = {
    LogLevel.DEBUG: logging.DEBUG,
    LogLevel.INFO: logging.INFO,
    LogLevel.WARN: logging.WARNING,
    LogLevel.ERROR: logging.ERROR,
}


def _jsonable(value: Any) -> Any:
    # Diverged losses are NaN/inf; bare NaN is not valid JSON.
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if hasattr(value, "item") and getattr(value, "ndim", None) == 0:
        return _jsonable(value.item())
    return value


class JSONFormatter(logging.Formatter):
    """Format n2vst records as JSON lines."""

    def format(self, record: logging.LogRecord) -> str:
        entry: dict[str, Any] = {
            "timestamp": datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            "level": record.levelname.lower(),
            "message": record.getMessage(),
        }
        stage = getattr(record, "stage", None)
        if stage:
            entry["stage"] = stage

        fields = dict(getattr(record, "fields", {}))
        for key in TOP_LEVEL_FIELDS:
            if key in fields:
                entry[key] = _jsonable(fields.pop(key))
        if fields:
            entry["data"] = {key: _jsonable(value) for key, value in fields.items()}

        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)
        return json.dumps(entry, ensure_ascii=False, default=str)


class N2vstLogger:
    """Stage-tagged structured logger."""

    def __init__(self, name: str = "n2vst", level: LogLevel = LogLevel.INFO):
        self._logger = logging.getLogger(name)
        self._logger.setLevel(_LEVELS.get(level, logging.INFO))
        self._logger.handlers.clear()
        self._logger.propagate = False

        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(JSONFormatter())
        self._logger.addHandler(handler)

    def _log(self, level: int, message: str, stage: str | None, fields: dict[str, Any]) -> None:
        self._logger.log(level, message, extra={"stage": stage, "fields": fields})

    def debug(self, message: str, stage: str | None = None, **kwargs: Any) -> None:
        self._log(logging.DEBUG, message, stage, kwargs)

    def info(self, message: str, stage: str | None = None, **kwargs: Any) -> None:
        self._log(logging.INFO, message, stage, kwargs)

    def warn(self, message: str, stage: str | None = None, **kwargs: Any) -> None:
        self._log(logging.WARNING, message, stage, kwargs)

    def error(self, message: str, stage: str | None = None, **kwargs: Any) -> None:
        self._log(logging.ERROR, message, stage, kwargs)

    def iteration(self, iteration: int, loss: float, lr: float) -> None:
        """One training progress record."""
        self._log(logging.INFO, "Iteration", "train", {"iteration": iteration, "loss": loss, "lr": lr})


_logger: N2vstLogger | None = None


def get_logger() -> N2vstLogger:
    """Get the global logger instance."""
    global _logger
    if _logger is None:
        _logger = N2vstLogger()
    return _logger


def configure_logger(level: LogLevel) -> N2vstLogger:
    """Configure and return the global logger."""
    global _logger
    _logger = N2vstLogger(level=level)
    return _logger
