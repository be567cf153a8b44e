"""Centralized error handling for the ICAD CLI.

This module provides:
- Standard error codes
- Error envelope format for --json output
- Exit-code mapping for domain exceptions
"""

import json
import sys
from dataclasses import dataclass, field
from typing import Optional

from .common import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigError,
    ContractError,
    DataError,
    IcadError,
    ManifestError,
    NumericError,
    UndefinedMetricError,
)


# =============================================================================
# Error Codes
# =============================================================================

# Input errors
CONFIG_INVALID = "CONFIG_INVALID"
INVALID_ARGUMENT = "INVALID_ARGUMENT"
FILE_NOT_FOUND = "FILE_NOT_FOUND"

# Data errors
MANIFEST_INVALID = "MANIFEST_INVALID"
DATA_INVALID = "DATA_INVALID"
METRIC_UNDEFINED = "METRIC_UNDEFINED"
CONTRACT_VIOLATION = "CONTRACT_VIOLATION"

# Checkpoint errors
CHECKPOINT_INVALID = "CHECKPOINT_INVALID"
CHECKPOINT_VERSION = "CHECKPOINT_VERSION"
CHECKPOINT_CORRUPT = "CHECKPOINT_CORRUPT"

# Numeric errors
NUMERIC_FAILURE = "NUMERIC_FAILURE"

# Generic errors
INTERNAL_ERROR = "INTERNAL_ERROR"


# Process exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


# =============================================================================
# Error Envelope
# =============================================================================


@dataclass
class IcadCliError:
    """Structured error for JSON output.

    Attributes:
        code: Machine-readable error code.
        message: Human-readable error message.
        exit_code: Process exit code for this error.
        hints: Actionable suggestions for resolving the error.
        details: Context-specific error details.
    """

    code: str
    message: str
    exit_code: int = EXIT_USAGE
    hints: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Convert to error envelope dict."""
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "exit_code": self.exit_code,
                "hints": self.hints,
                "details": self.details,
            }
        }

    def to_json(self, indent: int = 2) -> str:
        """Convert to JSON string."""
        return json.dumps(self.to_dict(), indent=indent, default=str)

    def print_json(self, file=None) -> None:
        """Print error as JSON to file (default: stderr)."""
        if file is None:
            file = sys.stderr
        print(self.to_json(), file=file)

    def print_text(self, file=None) -> None:
        """Print error as human-readable text to file (default: stderr)."""
        if file is None:
            file = sys.stderr
        print(f"Error: {self.message}", file=file)
        for hint in self.hints:
            print(f"  Hint: {hint}", file=file)


# =============================================================================
# Factory Functions
# =============================================================================


def file_not_found(path: str) -> IcadCliError:
    """Create error for a missing file."""
    return IcadCliError(
        code=FILE_NOT_FOUND,
        message=f"File not found: {path}",
        exit_code=EXIT_DATA,
        hints=["Check that the file path is correct"],
        details={"path": path},
    )


def invalid_argument(arg_name: str, value: str, reason: str = "") -> IcadCliError:
    """Create error for an invalid CLI argument."""
    msg = f"Invalid argument '{arg_name}': {value}"
    if reason:
        msg += f" ({reason})"
    return IcadCliError(
        code=INVALID_ARGUMENT,
        message=msg,
        exit_code=EXIT_USAGE,
        hints=["Run: icad <command> --help"],
        details={"argument": arg_name, "value": value, "reason": reason},
    )


def config_invalid(error: ConfigError) -> IcadCliError:
    """Create error for a rejected run configuration."""
    return IcadCliError(
        code=CONFIG_INVALID,
        message=str(error),
        exit_code=EXIT_USAGE,
        hints=["Compare the config against schemas/run-config.schema.json"],
        details={"key": error.key, "reason": error.reason},
    )


def data_invalid(error: DataError) -> IcadCliError:
    """Create error for malformed input data or manifests."""
    code = MANIFEST_INVALID if isinstance(error, ManifestError) else DATA_INVALID
    details = {"path": str(error.path)} if error.path is not None else {}
    return IcadCliError(
        code=code,
        message=str(error),
        exit_code=EXIT_DATA,
        hints=["Check the manifest paths, label lengths and numeric values"],
        details=details,
    )


def checkpoint_invalid(error: CheckpointError) -> IcadCliError:
    """Create error for an unreadable or incompatible checkpoint."""
    if isinstance(error, CheckpointIntegrityError):
        code = CHECKPOINT_CORRUPT
    elif isinstance(error, CheckpointVersionError):
        code = CHECKPOINT_VERSION
    else:
        code = CHECKPOINT_INVALID
    return IcadCliError(
        code=code,
        message=str(error),
        exit_code=EXIT_DATA,
        hints=["Re-run: icad train --config <path>"],
        details={"path": str(error.path), "reason": error.reason},
    )


def numeric_failure(error: NumericError) -> IcadCliError:
    """Create error for a numeric failure during training or scoring."""
    return IcadCliError(
        code=NUMERIC_FAILURE,
        message=str(error),
        exit_code=EXIT_NUMERIC,
        hints=["Lower the learning rate or check inputs for extreme values"],
        details=error.details,
    )


def internal_error(message: str, details: Optional[dict] = None) -> IcadCliError:
    """Create internal error."""
    return IcadCliError(
        code=INTERNAL_ERROR,
        message=f"Internal error: {message}",
        exit_code=EXIT_USAGE,
        hints=["Please report this issue"],
        details=details or {},
    )


def from_exception(error: Exception) -> IcadCliError:
    """Map a raised exception to its CLI error envelope.

    Args:
        error: Exception raised by a command.

    Returns:
        Error envelope with the matching code and exit code.
    """
    if isinstance(error, ConfigError):
        return config_invalid(error)
    if isinstance(error, CheckpointError):
        return checkpoint_invalid(error)
    if isinstance(error, DataError):
        return data_invalid(error)
    if isinstance(error, NumericError):
        return numeric_failure(error)
    if isinstance(error, UndefinedMetricError):
        return IcadCliError(
            code=METRIC_UNDEFINED,
            message=str(error),
            exit_code=EXIT_DATA,
            hints=["The test split needs both normal and anomalous samples"],
        )
    if isinstance(error, ContractError):
        return IcadCliError(
            code=CONTRACT_VIOLATION, message=str(error), exit_code=EXIT_DATA
        )
    if isinstance(error, FileNotFoundError):
        return file_not_found(str(error.filename or error))
    if isinstance(error, IcadError):
        return IcadCliError(code=DATA_INVALID, message=str(error), exit_code=EXIT_DATA)
    return internal_error(str(error), {"type": type(error).__name__})


# =============================================================================
# Output Helper
# =============================================================================


def print_error(
    error: IcadCliError,
    json_mode: bool = False,
    file=None,
) -> None:
    """Print error in appropriate format.

    Args:
        error: The error to print.
        json_mode: If True, print as JSON envelope. If False, print as text.
        file: Output file (default: stderr).
    """
    if json_mode:
        error.print_json(file)
    else:
        error.print_text(file)
