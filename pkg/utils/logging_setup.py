"""Structured logging setup for closed-loop runs.
Includes run-context tracking (scenario, controller mode, step index).
"""

import contextvars
import logging
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Dict, Iterator, List, Optional

# Module loggers of these packages share the run handlers
PACKAGE_LOGGERS = ("chmpc", "app_config", "cli", "services", "utils")

_RUN_CONTEXT: contextvars.ContextVar[Dict[str, Any]] = contextvars.ContextVar(
    "chmpc_run_context", default={}
)


class ContextFilter(logging.Filter):
    """Add run context fields to log records."""

    def filter(self, record: logging.LogRecord) -> bool:
        context = _RUN_CONTEXT.get()
        record.scenario = context.get("scenario", "-")
        record.mode = context.get("mode", "-")
        record.step = context.get("step", "-")
        record.timestamp = datetime.now(timezone.utc).isoformat()
        return True


@contextmanager
def run_context(**fields: Any) -> Iterator[None]:
    """Bind scenario/mode/step fields to every record emitted inside the block."""
    merged = dict(_RUN_CONTEXT.get())
    merged.update(fields)
    token = _RUN_CONTEXT.set(merged)
    try:
        yield
    finally:
        _RUN_CONTEXT.reset(token)


def set_step(step: int) -> None:
    """Update the step index of the current run context in place."""
    context = dict(_RUN_CONTEXT.get())
    context["step"] = step
    _RUN_CONTEXT.set(context)


def setup_logging(
    level: str = "INFO",
    log_file: Optional[str] = None,
    structured: bool = True
) -> logging.Logger:
    """Setup structured logging with run-context tracking.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional file path for logging
        structured: Whether to use the structured single-line format

    Returns:
        Configured package logger
    """
    logger = logging.getLogger("chmpc")

    # stderr keeps stdout free for command reports
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.DEBUG)

    if structured:
        fmt = (
            "%(timestamp)s | %(levelname)s | "
            "scenario=%(scenario)s mode=%(mode)s step=%(step)s | "
            "%(name)s:%(funcName)s:%(lineno)d | %(message)s"
        )
    else:
        fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    formatter = logging.Formatter(fmt)
    context_filter = ContextFilter()
    console_handler.setFormatter(formatter)
    console_handler.addFilter(context_filter)
    handlers: List[logging.Handler] = [console_handler]

    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        file_handler.addFilter(context_filter)
        handlers.append(file_handler)

    for name in PACKAGE_LOGGERS:
        package_logger = logging.getLogger(name)
        package_logger.setLevel(getattr(logging, level.upper(), logging.INFO))
        package_logger.handlers.clear()
        for handler in handlers:
            package_logger.addHandler(handler)

    logger.propagate = False
    return logger


def get_logger(name: str = "chmpc") -> logging.Logger:
    """Get a logger under the package namespace, configuring it on first use.

    Args:
        name: Logger name (default: 'chmpc')

    Returns:
        Logger instance
    """
    root = logging.getLogger("chmpc")
    if not root.handlers:
        from app_config.settings import LOG_FILE, LOG_LEVEL
        setup_logging(level=LOG_LEVEL, log_file=LOG_FILE)
    return logging.getLogger(name if name.startswith("chmpc") else f"chmpc.{name}")


def log_solver_event(
    logger: logging.Logger,
    status: str,
    iterations: int,
    stationarity: float,
    feasibility: float,
    duration_ms: Optional[float] = None,
) -> None:
    """Log one NLP solve with structured data.

    Args:
        logger: Logger instance
        status: Solver status value
        iterations: Inner iterations used
        stationarity: Final KKT stationarity residual
        feasibility: Final equality feasibility residual
        duration_ms: Optional wall time in milliseconds
    """
    context = {
        "status": status,
        "iterations": iterations,
        "stationarity": stationarity,
        "feasibility": feasibility,
        "duration_ms": duration_ms,
    }
    msg = (
        f"NLP solve {status} after {iterations} iterations "
        f"(stat={stationarity:.2e}, feas={feasibility:.2e})"
    )
    if status == "converged":
        logger.debug(msg, extra=context)
    else:
        logger.warning(msg, extra=context)


def log_run_summary(logger: logging.Logger, summary: Dict[str, Any]) -> None:
    """Log the end-of-run statistics of a closed-loop simulation."""
    logger.info(
        "Run finished: arrived=%s arrival_s=%s energy_kJ=%.3f violations=%d",
        summary.get("arrived"),
        summary.get("arrival_time_s"),
        summary.get("total_energy_kj", 0.0),
        summary.get("violations", 0),
        extra={"summary": summary},
    )
