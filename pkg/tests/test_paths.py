"""Tests for artifact path resolution and dataset ids."""

from pathlib import Path

import pytest

from icad.paths import (
    InvalidPathError,
    PathEscapeError,
    canonicalize_artifact_name,
    resolve_data_path,
    resolve_under,
    validate_dataset_id,
)


class TestCanonicalizeArtifactName:
    """Tests for canonicalize_artifact_name."""

    def test_forward_slashes_preserved(self):
        assert canonicalize_artifact_name("eval/synth-ts-0.json") == "eval/synth-ts-0.json"

    def test_backslashes_converted(self):
        """Windows backslashes are converted to forward slashes."""
        assert canonicalize_artifact_name("scores\\a.jsonl") == "scores/a.jsonl"

    def test_dot_segments_removed(self):
        assert canonicalize_artifact_name("./eval/./a.json") == "eval/a.json"
        assert canonicalize_artifact_name("eval/") == "eval"

    def test_double_dot_resolved(self):
        assert canonicalize_artifact_name("eval/x/../a.json") == "eval/a.json"

    @pytest.mark.parametrize("name", ["../a.json", "eval/../../a.json", "/etc/passwd"])
    def test_escape_raises(self, name):
        with pytest.raises(PathEscapeError):
            canonicalize_artifact_name(name)

    @pytest.mark.parametrize("name", ["", "   ", ".", "a\x00b", "a:b", "eval/.."])
    def test_invalid_raises(self, name):
        with pytest.raises(InvalidPathError):
            canonicalize_artifact_name(name)


class TestResolveUnder:
    """Tests for resolve_under."""

    def test_inside_root(self, tmp_path):
        assert resolve_under(tmp_path, "eval/a.json") == tmp_path.resolve() / "eval" / "a.json"

    def test_symlink_escape(self, tmp_path):
        """A symlink pointing out of the root is rejected after resolution."""
        outside = tmp_path / "outside"
        outside.mkdir()
        root = tmp_path / "root"
        root.mkdir()
        try:
            (root / "link").symlink_to(outside, target_is_directory=True)
        except OSError:
            pytest.skip("symlinks unavailable")
        with pytest.raises(PathEscapeError):
            resolve_under(root, "link/a.json")


class TestResolveDataPath:
    """Tests for resolve_data_path."""

    def test_relative_to_manifest(self, tmp_path):
        manifest = tmp_path / "task" / "manifest.json"
        assert resolve_data_path(manifest, "rows.csv") == tmp_path.resolve() / "task" / "rows.csv"

    def test_absolute_kept(self, tmp_path):
        target = tmp_path / "elsewhere" / "rows.csv"
        assert resolve_data_path(Path("m.json"), str(target)) == target


class TestValidateDatasetId:
    """Tests for validate_dataset_id."""

    @pytest.mark.parametrize("dataset_id", ["synth-ts-0", "SMD_machine.1", "a"])
    def test_valid(self, dataset_id):
        assert validate_dataset_id(dataset_id) == dataset_id

    @pytest.mark.parametrize("dataset_id", ["", "-lead", "has space", "a/b", "x\x1fy", 3])
    def test_invalid(self, dataset_id):
        with pytest.raises(InvalidPathError):
            validate_dataset_id(dataset_id)
