"""tridepth structured logging package.

Public API:
    get_logger           Get a StructuredLogger for a module
    setup_logging        Configure root logger (call once at startup)
    open_metrics_stream  Send metrics records to a JSON-lines file
    start_step           Mark beginning of a training step
    current_step         Index of the active step
    elapsed_ms           Get ms since start_step()
    reset_step           Clear step context
    logged               Zero-cost function tracing decorator
    StructuredLogger, SmartFormatter, PlainFormatter, JsonFormatter
"""

from tridepth.logging.structured_logger import (
    StructuredLogger,
    get_logger,
    start_step,
    current_step,
    elapsed_ms,
    reset_step,
)
from tridepth.logging.formatters import SmartFormatter, PlainFormatter, JsonFormatter
from tridepth.logging.setup import (
    METRICS_LOGGER,
    close_metrics_stream,
    open_metrics_stream,
    setup_logging,
)
from tridepth.logging.tracing import logged

__all__ = [
    "get_logger",
    "setup_logging",
    "open_metrics_stream",
    "close_metrics_stream",
    "METRICS_LOGGER",
    "start_step",
    "current_step",
    "elapsed_ms",
    "reset_step",
    "logged",
    "StructuredLogger",
    "SmartFormatter",
    "PlainFormatter",
    "JsonFormatter",
]
