"""Tests for the CLI error envelope and exception mapping."""

import json
from pathlib import Path

import pytest

from icad.common import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    EmptyInputError,
    ManifestError,
    ModalityMismatchError,
    NumericError,
    UndefinedMetricError,
)
from icad.errors import (
    CHECKPOINT_CORRUPT,
    CHECKPOINT_INVALID,
    CHECKPOINT_VERSION,
    CONFIG_INVALID,
    CONTRACT_VIOLATION,
    DATA_INVALID,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_USAGE,
    FILE_NOT_FOUND,
    INTERNAL_ERROR,
    MANIFEST_INVALID,
    METRIC_UNDEFINED,
    NUMERIC_FAILURE,
    IcadCliError,
    file_not_found,
    from_exception,
    internal_error,
    invalid_argument,
    print_error,
)


class TestIcadCliError:
    """Tests for the envelope itself."""

    def test_to_dict_structure(self):
        error = IcadCliError(code="X", message="m", exit_code=2, hints=["h"], details={"a": 1})
        assert error.to_dict() == {
            "error": {"code": "X", "message": "m", "exit_code": 2, "hints": ["h"], "details": {"a": 1}}
        }

    def test_defaults(self):
        error = IcadCliError(code="X", message="m")
        assert error.exit_code == EXIT_USAGE
        assert error.to_dict()["error"]["hints"] == []

    def test_to_json_valid(self):
        error = invalid_argument("-K", "0", "must be positive")
        parsed = json.loads(error.to_json())
        assert parsed["error"]["details"]["argument"] == "-K"
        assert "must be positive" in parsed["error"]["message"]


class TestFromException:
    """Exceptions map to stable codes and exit codes."""

    @pytest.mark.parametrize(
        "exc, code, exit_code",
        [
            (ConfigError("train.K", "must be >= 1"), CONFIG_INVALID, EXIT_USAGE),
            (ManifestError("missing keys", Path("m.json")), MANIFEST_INVALID, EXIT_DATA),
            (DataError("non-finite value"), DATA_INVALID, EXIT_DATA),
            (CheckpointError(Path("a.ckpt"), "absent"), CHECKPOINT_INVALID, EXIT_DATA),
            (CheckpointVersionError(Path("a.ckpt"), "v2"), CHECKPOINT_VERSION, EXIT_DATA),
            (CheckpointIntegrityError(Path("a.ckpt"), "digest"), CHECKPOINT_CORRUPT, EXIT_DATA),
            (NumericError("zero norm", {"dataset_id": "d"}), NUMERIC_FAILURE, EXIT_NUMERIC),
            (UndefinedMetricError("single class"), METRIC_UNDEFINED, EXIT_DATA),
            (ModalityMismatchError("log vs tabular"), CONTRACT_VIOLATION, EXIT_DATA),
            (RuntimeError("boom"), INTERNAL_ERROR, EXIT_USAGE),
        ],
    )
    def test_mapping(self, exc, code, exit_code):
        error = from_exception(exc)
        assert error.code == code
        assert error.exit_code == exit_code

    def test_config_details(self):
        error = from_exception(ConfigError("seed", "must be >= 0"))
        assert error.details == {"key": "seed", "reason": "must be >= 0"}
        assert error.message == "Invalid config 'seed': must be >= 0"

    def test_data_error_path(self):
        error = from_exception(DataError("bad row", Path("x.csv")))
        assert error.details == {"path": "x.csv"}

    @pytest.mark.parametrize("cls, code", [(EmptyInputError, DATA_INVALID), (ManifestError, MANIFEST_INVALID)])
    def test_with_path_keeps_subclass(self, cls, code):
        error = cls("too short").with_path(Path("m.json"))
        assert type(error) is cls
        assert error.message == "too short"
        assert str(error) == "too short (m.json)"
        envelope = from_exception(error)
        assert envelope.code == code
        assert envelope.details == {"path": "m.json"}

    def test_numeric_details_carried(self):
        error = from_exception(NumericError("non-finite loss", {"step": 7}))
        assert error.details == {"step": 7}

    def test_file_not_found(self):
        error = from_exception(FileNotFoundError(2, "No such file", "gone.json"))
        assert error.code == FILE_NOT_FOUND
        assert error.details["path"] == "gone.json"

    def test_internal_error_type(self):
        error = internal_error("x", {"type": "KeyError"})
        assert error.message == "Internal error: x"
        assert error.details["type"] == "KeyError"


class TestPrintError:
    """Tests for print_error."""

    def test_json_mode(self, capsys):
        print_error(file_not_found("a.json"), json_mode=True)
        parsed = json.loads(capsys.readouterr().err)
        assert parsed["error"]["code"] == FILE_NOT_FOUND

    def test_text_mode(self, capsys):
        print_error(file_not_found("a.json"))
        err = capsys.readouterr().err
        assert err.startswith("Error: File not found: a.json")
        assert "Hint:" in err
