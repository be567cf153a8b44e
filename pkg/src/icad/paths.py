"""Artifact path resolution and safety utilities.

Every artifact a command writes lives under the run's output directory.
Relative artifact names are canonicalized:
- / as separator
- No . or .. segments escaping the root
- No trailing slash

Manifest data paths are resolved relative to the manifest's directory.
"""

import re
from pathlib import Path


class PathEscapeError(Exception):
    """Raised when a path attempts to escape the output directory."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Path escape attempt: {path} - {reason}")


class InvalidPathError(Exception):
    """Raised for invalid path characters or structure."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Invalid path: {path} - {reason}")


# Control characters and characters Windows refuses in file names
INVALID_CHARS = re.compile(r'[\x00-\x1f<>:"|?*]')

# Dataset ids become directory and LMDB key components
DATASET_ID_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def canonicalize_artifact_name(name: str) -> str:
    """Canonicalize a relative artifact name.

    Args:
        name: Relative name (may use any separator).

    Returns:
        Canonical name with / separators and no . or .. segments.

    Raises:
        PathEscapeError: If the name climbs above the root.
        InvalidPathError: If the name is empty or has invalid characters.
    """
    if not name or not name.strip():
        raise InvalidPathError(name, "empty path")
    if INVALID_CHARS.search(name):
        raise InvalidPathError(name, "contains invalid characters")

    normalized = name.replace("\\", "/").strip()
    if normalized.startswith("/"):
        raise PathEscapeError(name, "absolute paths are not artifact names")

    resolved: list[str] = []
    for part in normalized.split("/"):
        if not part or part == ".":
            continue
        if part == "..":
            if not resolved:
                raise PathEscapeError(name, "attempts to go above root")
            resolved.pop()
        else:
            resolved.append(part)

    if not resolved:
        raise InvalidPathError(name, "path resolves to root")
    return "/".join(resolved)


def resolve_under(root: Path, name: str) -> Path:
    """Resolve an artifact name under an output directory.

    Args:
        root: Output directory.
        name: Relative artifact name.

    Returns:
        Absolute path under root.

    Raises:
        PathEscapeError: If the resolved path escapes root (e.g. via symlinks).
    """
    canonical = canonicalize_artifact_name(name)
    root_resolved = Path(root).resolve()
    full_path = (root_resolved / canonical).resolve()
    try:
        full_path.relative_to(root_resolved)
    except ValueError:
        raise PathEscapeError(name, "resolved path escapes root")
    return full_path


def resolve_data_path(manifest_path: Path, data_path: str) -> Path:
    """Resolve a manifest's data or label path.

    Relative paths are taken relative to the manifest's directory.

    Args:
        manifest_path: Path of the manifest file.
        data_path: Path as written in the manifest.

    Returns:
        Absolute data path.
    """
    path = Path(data_path)
    if not path.is_absolute():
        path = Path(manifest_path).resolve().parent / path
    return path


def validate_dataset_id(dataset_id: str) -> str:
    """Check that a dataset id is usable as a directory and key component.

    Args:
        dataset_id: Candidate id.

    Returns:
        The id unchanged.

    Raises:
        InvalidPathError: If the id has unsupported characters.
    """
    if not isinstance(dataset_id, str) or not DATASET_ID_PATTERN.match(dataset_id):
        raise InvalidPathError(str(dataset_id), "dataset ids use [A-Za-z0-9_.-]")
    return dataset_id
