"""
Custom exception classes for the fingerprint active-learning lab.

This module defines the exceptions raised by channel generation, training,
selection, the experiment protocol and the artifact layer. Each exception
carries a stable error code, structured details and the process exit code
the command line uses when it is not handled.
"""

from enum import IntEnum
from typing import Any, Dict, Optional, Sequence


class ExitCode(IntEnum):
    """Process exit codes of the command line."""
    SUCCESS = 0
    USAGE = 1
    CONFIG = 2
    RUNTIME = 3


class FingerprintLabException(Exception):
    """Base exception for all lab exceptions."""

    def __init__(
        self,
        message: str,
        exit_code: int = ExitCode.RUNTIME,
        details: Optional[Dict[str, Any]] = None,
        error_code: Optional[str] = None
    ):
        self.message = message
        self.exit_code = exit_code
        self.details = details or {}
        self.error_code = error_code or self.__class__.__name__
        super().__init__(self.message)


# Configuration Exceptions
class ConfigParseError(FingerprintLabException):
    """Exception raised when a config file line cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, text: Optional[str] = None):
        details: Dict[str, Any] = {}
        if line is not None:
            details["line"] = line
            message = f"line {line}: {message}"
        if text is not None:
            details["text"] = text
        super().__init__(
            message=message,
            exit_code=ExitCode.CONFIG,
            details=details,
            error_code="CONFIG_PARSE_ERROR"
        )
        self.line = line


class ConfigValidationError(FingerprintLabException):
    """Exception raised when a config value violates a constraint."""

    def __init__(
        self,
        message: str = "Configuration validation failed",
        field: Optional[str] = None,
        constraint: Optional[str] = None,
        value: Optional[Any] = None
    ):
        details: Dict[str, Any] = {}
        if field:
            details["field"] = field
        if constraint:
            details["constraint"] = constraint
        if value is not None:
            details["value"] = str(value)
        super().__init__(
            message=message,
            exit_code=ExitCode.CONFIG,
            details=details,
            error_code="CONFIG_VALIDATION_ERROR"
        )
        self.field = field
        self.constraint = constraint


class InvalidSceneConfigError(ConfigValidationError):
    """Exception raised for a scene geometry that the channel model cannot use."""

    def __init__(self, message: str, field: Optional[str] = None, value: Optional[Any] = None):
        super().__init__(message=message, field=field, constraint="scene", value=value)
        self.error_code = "INVALID_SCENE_CONFIG"


# Channel Exceptions
class DistanceTooSmallError(FingerprintLabException):
    """Exception raised when the path-loss formula is evaluated below 1 m."""

    def __init__(self, distance_m: float):
        super().__init__(
            message=f"3D distance {distance_m} m is below the 1 m path-loss domain",
            details={"distance_m": distance_m},
            error_code="DISTANCE_TOO_SMALL"
        )


class PositionOutOfSceneError(FingerprintLabException):
    """Exception raised for positions outside the factory rectangle."""

    def __init__(self, position: Sequence[float], width_m: float, length_m: float):
        super().__init__(
            message=f"Position {tuple(position)} lies outside the {width_m} x {length_m} m scene",
            details={"position": list(position), "width_m": width_m, "length_m": length_m},
            error_code="POSITION_OUT_OF_SCENE"
        )


class UnknownBSIndexError(FingerprintLabException):
    """Exception raised when a BS column is requested that the dataset does not hold."""

    def __init__(self, requested: Sequence[int], available: Sequence[int]):
        super().__init__(
            message=f"Unknown or unordered BS indices {list(requested)}",
            details={"requested": list(requested), "available": list(available)},
            error_code="UNKNOWN_BS_INDEX"
        )


class PoolTooSmallError(FingerprintLabException):
    """Exception raised when a pool cannot be split into D1 and candidates."""

    def __init__(self, pool_size: int, n: int):
        super().__init__(
            message=f"Pool of {pool_size} samples cannot provide 2 x {n} disjoint samples",
            details={"pool_size": pool_size, "n": n},
            error_code="POOL_TOO_SMALL"
        )


# Data Exceptions
class DimensionMismatchError(FingerprintLabException):
    """Exception raised when array shapes disagree."""

    def __init__(self, message: str, expected: Optional[Any] = None, actual: Optional[Any] = None):
        details: Dict[str, Any] = {}
        if expected is not None:
            details["expected"] = expected
        if actual is not None:
            details["actual"] = actual
        super().__init__(message=message, details=details, error_code="DIMENSION_MISMATCH")


class EmptyInputError(FingerprintLabException):
    """Exception raised when an operation receives no data."""

    def __init__(self, what: str):
        super().__init__(
            message=f"{what} is empty",
            details={"input": what},
            error_code="EMPTY_INPUT"
        )


# Training Exceptions
class TrainingDivergenceError(FingerprintLabException):
    """Exception raised when the training loss stops being finite."""

    def __init__(self, epoch: int, loss: float, details: Optional[Dict[str, Any]] = None):
        divergence_details = details or {}
        divergence_details.update({"epoch": epoch, "loss": str(loss)})
        super().__init__(
            message=f"Training diverged at epoch {epoch} (loss={loss})",
            details=divergence_details,
            error_code="TRAINING_DIVERGED"
        )
        self.epoch = epoch


# Checkpoint Exceptions
class CheckpointError(FingerprintLabException):
    """Exception raised for unreadable checkpoints."""

    def __init__(
        self,
        message: str = "Checkpoint could not be read",
        path: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None
    ):
        checkpoint_details = details or {}
        if path:
            checkpoint_details["path"] = path
        super().__init__(message=message, details=checkpoint_details, error_code="CHECKPOINT_ERROR")


class CheckpointVersionError(CheckpointError):
    """Exception raised when the checkpoint format version is not supported."""

    def __init__(self, found: int, expected: int, path: Optional[str] = None):
        super().__init__(
            message=f"Checkpoint format version {found} is not supported (expected {expected})",
            path=path,
            details={"found": found, "expected": expected}
        )
        self.error_code = "CHECKPOINT_VERSION_MISMATCH"


class CorruptCheckpointError(CheckpointError):
    """Exception raised for truncated or tampered checkpoints."""

    def __init__(self, message: str = "Checkpoint is corrupt", path: Optional[str] = None):
        super().__init__(message=message, path=path)
        self.error_code = "CORRUPT_CHECKPOINT"


# Selection and Metric Exceptions
class SelectionSizeError(FingerprintLabException):
    """Exception raised when k is not in [0, number of candidates]."""

    def __init__(self, k: int, n_candidates: int):
        super().__init__(
            message=f"Cannot select {k} of {n_candidates} candidates",
            details={"k": k, "n_candidates": n_candidates},
            error_code="K_OUT_OF_RANGE"
        )


class ZeroInitialErrorError(FingerprintLabException):
    """Exception raised when a gain is requested against a zero initial error."""

    def __init__(self, q90_initial: float):
        super().__init__(
            message=f"Gain is undefined for initial Q(0.9) = {q90_initial}",
            details={"q90_initial": q90_initial},
            error_code="ZERO_INITIAL_ERROR"
        )


class ProtocolInvariantError(FingerprintLabException):
    """Exception raised when a realization's index sets stop partitioning the pool."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message=message, details=details, error_code="PROTOCOL_INVARIANT")


# Artifact Exceptions
class ArtifactIOError(FingerprintLabException):
    """Exception raised when an artifact cannot be read or written."""

    def __init__(
        self,
        message: str = "Artifact I/O failed",
        path: Optional[str] = None,
        operation: Optional[str] = None
    ):
        details: Dict[str, Any] = {}
        if path:
            details["path"] = path
        if operation:
            details["operation"] = operation
        super().__init__(message=message, details=details, error_code="ARTIFACT_IO_ERROR")


class ManifestVerificationError(ArtifactIOError):
    """Exception raised when emitted files no longer match their manifest checksums."""

    def __init__(self, mismatched: Sequence[str], path: Optional[str] = None):
        super().__init__(
            message=f"{len(mismatched)} artifact(s) do not match the manifest",
            path=path,
            operation="verify"
        )
        self.details["mismatched"] = list(mismatched)
        self.error_code = "MANIFEST_MISMATCH"
