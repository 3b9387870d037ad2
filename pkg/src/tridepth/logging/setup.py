"""Logging setup: root logger with console + async file handlers, metrics stream."""

from __future__ import annotations

import atexit
import logging
import os
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler
from pathlib import Path
from queue import Queue

from tridepth.logging.formatters import JsonFormatter, PlainFormatter, SmartFormatter

METRICS_LOGGER = "tridepth.metrics"

_listeners: list[QueueListener] = []


def create_async_handler(
    log_path: str,
    max_bytes: int = 10 * 1024 * 1024,
    backup_count: int = 5,
    formatter: logging.Formatter | None = None,
    level: int | None = None,
) -> tuple[QueueHandler, QueueListener]:
    """Rotating file handler fed through a queue.

    Returns (queue_handler, listener). Caller must start and stop the
    listener. Pass level=logging.ERROR for an error-only file.
    """
    queue: Queue = Queue(-1)
    file_handler = RotatingFileHandler(
        log_path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8",
    )
    if level is not None:
        file_handler.setLevel(level)
    file_handler.setFormatter(formatter or logging.Formatter("%(message)s"))
    listener = QueueListener(queue, file_handler, respect_handler_level=True)
    return QueueHandler(queue), listener


def setup_logging(
    level: str | None = None,
    log_dir: str | None = None,
) -> None:
    """Configure root logger with console + async file handlers.

    Level resolution: explicit arg > TRIDEPTH_LOG_LEVEL / LOG_LEVEL env > config default.
    """
    from tridepth.config import settings

    resolved = (
        level
        or os.environ.get("TRIDEPTH_LOG_LEVEL")
        or os.environ.get("LOG_LEVEL")
        or settings.log_level
    )
    log_dir = log_dir or os.environ.get("LOG_DIR") or settings.log_dir
    root = logging.getLogger()
    root.setLevel(getattr(logging, resolved.upper(), logging.INFO))

    root.handlers.clear()
    _shutdown_listeners()

    console = logging.StreamHandler()
    console.setFormatter(SmartFormatter())
    root.addHandler(console)

    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    file_handler, file_listener = create_async_handler(
        str(log_path / "tridepth.log"),
        formatter=PlainFormatter(),
    )
    root.addHandler(file_handler)
    file_listener.start()
    _listeners.append(file_listener)

    error_handler, error_listener = create_async_handler(
        str(log_path / "tridepth_error.log"),
        formatter=PlainFormatter(),
        level=logging.ERROR,
    )
    root.addHandler(error_handler)
    error_listener.start()
    _listeners.append(error_listener)

    atexit.register(_shutdown_listeners)


def open_metrics_stream(path: str | Path) -> logging.Handler:
    """Route the metrics logger to a JSON-lines file; returns the handler.

    Metrics records never reach the console: the metrics logger does not
    propagate. Detach with ``close_metrics_stream(handler)``.
    """
    handler = logging.FileHandler(path, encoding="utf-8")
    handler.setFormatter(JsonFormatter())
    metrics = logging.getLogger(METRICS_LOGGER)
    metrics.setLevel(logging.INFO)
    metrics.propagate = False
    metrics.addHandler(handler)
    return handler


def close_metrics_stream(handler: logging.Handler) -> None:
    logging.getLogger(METRICS_LOGGER).removeHandler(handler)
    handler.close()


def _shutdown_listeners() -> None:
    for listener in _listeners:
        try:
            listener.stop()
        except Exception:
            pass
    _listeners.clear()
