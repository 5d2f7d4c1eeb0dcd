"""Structured logging setup.

Call ``configure_logging`` once at process start; modules obtain loggers with
``get_logger`` and log snake_case events with key/value context.
"""

import logging
import sys
from typing import Any

import structlog

_configured = False


def configure_logging(service_name: str = "graml", level: str = "INFO") -> None:
    """Configure structlog to emit JSON lines on stderr."""
    global _configured
    numeric_level = logging.getLevelName(level.upper())
    if not isinstance(numeric_level, int):
        raise ValueError(f"Unknown log level: {level}")

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.format_exc_info,
            structlog.processors.JSONRenderer(default=str),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(service=service_name)
    _configured = True


def get_logger(name: str | None = None, **initial_values: Any) -> Any:
    """Get a bound logger, configuring defaults on first use."""
    if not _configured:
        configure_logging()
    if name:
        initial_values["logger_name"] = name
    # "logger" is a parameter name of structlog.wrap_logger
    return structlog.get_logger(**initial_values)
