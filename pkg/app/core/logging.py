"""
Structured logging for the fingerprint active-learning lab.

This module provides JSON log records, a timing decorator for expensive
stages, and a domain logger for experiment events.
"""

import json
import logging
import time
from datetime import datetime, timezone
from functools import wraps
from typing import Any, Dict, Optional

from app.core.config import settings


EXTRA_FIELDS = (
    "realization",
    "bs_count",
    "strategy",
    "seed",
    "stage",
    "epoch",
    "loss",
    "duration_ms",
    "error_code",
    "details",
    "path",
)


class StructuredFormatter(logging.Formatter):
    """Custom formatter for structured logging."""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as structured JSON."""
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        for field in EXTRA_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


def setup_logging(level: Optional[str] = None, json_format: Optional[bool] = None) -> None:
    """Set up logging configuration."""
    level = (level or settings.LOG_LEVEL).upper()
    if json_format is None:
        json_format = settings.LOG_FORMAT == "json"

    if json_format:
        formatter: logging.Formatter = StructuredFormatter()
    else:
        formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)
    root_logger.addHandler(console_handler)

    logging.getLogger("fplab").setLevel(level)

    # matplotlib is chatty about font discovery at DEBUG
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def log_function_call(logger: Optional[logging.Logger] = None):
    """Decorator to log function calls with their duration."""
    def decorator(func):
        nonlocal logger
        if logger is None:
            logger = logging.getLogger(f"fplab.{func.__module__}")

        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            logger.debug(
                f"Function called: {func.__name__}",
                extra={"stage": func.__name__}
            )

            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
                logger.error(
                    f"Function failed: {func.__name__}",
                    extra={
                        "stage": func.__name__,
                        "duration_ms": duration_ms,
                        "details": {"error": str(exc), "error_type": type(exc).__name__}
                    },
                    exc_info=True
                )
                raise

            duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
            logger.debug(
                f"Function completed: {func.__name__}",
                extra={"stage": func.__name__, "duration_ms": duration_ms}
            )
            return result

        return wrapper

    return decorator


class ExperimentLogger:
    """Logger for experiment events."""

    def __init__(self):
        self.logger = logging.getLogger("fplab.protocol")

    def log_realization_started(self, realization: int, bs_count: int, seed: int):
        """Log the start of one (bs_count, realization) job."""
        self.logger.info(
            f"Realization {realization} started for {bs_count} BS",
            extra={"realization": realization, "bs_count": bs_count, "seed": seed}
        )

    def log_realization_completed(
        self,
        realization: int,
        bs_count: int,
        strategy: str,
        duration_ms: float,
        details: Optional[Dict[str, Any]] = None
    ):
        """Log one finished strategy of a realization."""
        self.logger.info(
            f"Realization {realization} finished {strategy} for {bs_count} BS",
            extra={
                "realization": realization,
                "bs_count": bs_count,
                "strategy": strategy,
                "duration_ms": duration_ms,
                "details": details or {}
            }
        )

    def log_realization_diverged(
        self,
        realization: int,
        bs_count: int,
        strategy: str,
        error_code: str,
        details: Optional[Dict[str, Any]] = None
    ):
        """Log a realization excluded because training diverged."""
        self.logger.warning(
            f"Realization {realization} diverged ({strategy}, {bs_count} BS); excluded from means",
            extra={
                "realization": realization,
                "bs_count": bs_count,
                "strategy": strategy,
                "error_code": error_code,
                "details": details or {}
            }
        )

    def log_training_progress(self, stage: str, epoch: int, loss: float):
        """Log periodic training loss."""
        logging.getLogger("fplab.neural").debug(
            f"{stage} epoch {epoch}: loss={loss:.6g}",
            extra={"stage": stage, "epoch": epoch, "loss": loss}
        )

    def log_artifact_written(self, path: str, details: Optional[Dict[str, Any]] = None):
        """Log an emitted artifact."""
        logging.getLogger("fplab.artifacts").info(
            f"Artifact written: {path}",
            extra={"path": path, "details": details or {}}
        )

    def log_manifest_mismatch(self, path: str, expected: str, actual: Optional[str]):
        """Log a manifest checksum failure."""
        logging.getLogger("fplab.artifacts").warning(
            f"Checksum mismatch for {path}",
            extra={"path": path, "details": {"expected": expected, "actual": actual}}
        )


experiment_logger = ExperimentLogger()
