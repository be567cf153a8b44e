"""Common utilities, constants and the exception hierarchy for ICAD.

This module defines contract-level constants and helpers used across all components.
"""

import hashlib
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from . import __version__

# Schema version as integer per contract
SCHEMA_VERSION = 1

# ICAD version; single source of truth is pyproject.toml via __version__
VERSION = __version__

# Producer info - identifies the implementation that created records
PRODUCER = {
    "name": "icad",
    "version": VERSION,
}


def utc_now_z() -> str:
    """Return current UTC time in RFC3339 format with Z suffix.

    Returns:
        ISO8601/RFC3339 timestamp ending in Z (e.g., "2025-02-02T12:00:00Z").
    """
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def file_digest_ref(path: Path) -> str:
    """Compute the digest reference of a file's contents, streaming.

    Args:
        path: Path to the file.

    Returns:
        Digest reference in format "sha256:<hex>".
    """
    hasher = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hasher.update(chunk)
    return f"sha256:{hasher.hexdigest()}"


# =============================================================================
# Exceptions
# =============================================================================


class IcadError(Exception):
    """Base class for all ICAD errors."""


class ConfigError(IcadError):
    """Raised for invalid run configuration or CLI usage."""

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"Invalid config '{key}': {reason}")


class DataError(IcadError):
    """Raised for malformed or non-finite input data."""

    def __init__(self, message: str, path: Optional[Path] = None):
        self.message = message
        self.path = path
        if path is not None:
            message = f"{message} ({path})"
        super().__init__(message)

    def with_path(self, path: Path) -> "DataError":
        """Copy of this error, same subclass, attributed to `path`."""
        return type(self)(self.message, path)


class EmptyInputError(DataError):
    """Raised when an input is too short to produce any sample."""


class ManifestError(DataError):
    """Raised when a dataset manifest is missing or malformed."""


class ContractError(IcadError):
    """Raised when a caller violates an operation's precondition."""


class ShapeMismatchError(ContractError):
    """Raised when a tensor or payload shape does not match the configuration."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"Shape mismatch for {what}: expected {expected}, got {actual}")


class ModalityMismatchError(ContractError):
    """Raised when samples of different modalities are combined."""


class NumericError(IcadError):
    """Raised on zero norms or non-finite activations and losses."""

    def __init__(self, message: str, details: Optional[dict] = None):
        self.details = details or {}
        super().__init__(message)


class UndefinedMetricError(IcadError):
    """Raised when a metric is undefined for its inputs (e.g. a single class)."""


class TripletError(IcadError):
    """Raised when a triplet violates its invariants."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("Invalid triplet: " + "; ".join(violations))


class CheckpointError(IcadError):
    """Raised when a checkpoint cannot be written, read or applied."""

    def __init__(self, path: Optional[Path], reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Checkpoint error at {path}: {reason}")


class CheckpointVersionError(CheckpointError):
    """Raised when a checkpoint was written by an incompatible format version."""


class CheckpointIntegrityError(CheckpointError):
    """Raised when a checkpoint's checksum does not match its payload."""
