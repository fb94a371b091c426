"""
Error handlers and response formats for the command line.

This module converts exceptions into a standardized error payload, logs
them, and maps them onto process exit codes.
"""

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional, TextIO

from pydantic import ValidationError as PydanticValidationError

from app.core.exceptions import ExitCode, FingerprintLabException


logger = logging.getLogger("fplab.cli")


class ErrorResponse:
    """Standardized error payload."""

    def __init__(
        self,
        error_code: str,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        timestamp: Optional[datetime] = None,
        command: Optional[str] = None
    ):
        self.error_code = error_code
        self.message = message
        self.details = details or {}
        self.timestamp = timestamp or datetime.now(timezone.utc)
        self.command = command

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for JSON output."""
        response = {
            "error": {
                "code": self.error_code,
                "message": self.message,
                "timestamp": self.timestamp.isoformat(),
            }
        }

        if self.details:
            response["error"]["details"] = self.details

        if self.command:
            response["error"]["command"] = self.command

        return response


def pydantic_errors_to_details(exc: PydanticValidationError) -> Dict[str, Any]:
    """Flatten pydantic validation errors the same way for every caller."""
    validation_errors = []
    for error in exc.errors():
        validation_errors.append({
            "field": ".".join(str(loc) for loc in error["loc"]),
            "message": error["msg"],
            "type": error["type"],
        })
    return {"validation_errors": validation_errors, "error_count": len(validation_errors)}


def build_error_response(exc: BaseException, command: Optional[str] = None) -> tuple[ErrorResponse, int]:
    """Map an exception onto an error payload and exit code."""
    if isinstance(exc, FingerprintLabException):
        return ErrorResponse(exc.error_code, exc.message, exc.details, command=command), int(exc.exit_code)

    if isinstance(exc, PydanticValidationError):
        return (
            ErrorResponse("CONFIG_VALIDATION_ERROR", "Configuration validation failed",
                          pydantic_errors_to_details(exc), command=command),
            int(ExitCode.CONFIG),
        )

    if isinstance(exc, OSError):
        return (
            ErrorResponse("ARTIFACT_IO_ERROR", str(exc), {"errno": exc.errno}, command=command),
            int(ExitCode.RUNTIME),
        )

    return (
        ErrorResponse("INTERNAL_ERROR", "An unexpected error occurred",
                      {"error_type": type(exc).__name__, "error": str(exc)}, command=command),
        int(ExitCode.RUNTIME),
    )


def handle_exception(exc: BaseException, command: Optional[str] = None, stream: Optional[TextIO] = None) -> int:
    """Log an exception, print its payload to stderr and return the exit code."""
    response, exit_code = build_error_response(exc, command)

    if isinstance(exc, FingerprintLabException) or isinstance(exc, PydanticValidationError):
        logger.warning(
            f"Command failed: {response.error_code} - {response.message}",
            extra={"error_code": response.error_code, "details": response.details}
        )
    else:
        logger.error(
            f"Unexpected error: {type(exc).__name__}",
            extra={"error_code": response.error_code, "details": response.details},
            exc_info=exc
        )

    stream = stream or sys.stderr
    stream.write(json.dumps(response.to_dict(), default=str) + "\n")
    return exit_code
