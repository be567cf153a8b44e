"""Cache metadata and fingerprinting for the prepared-sample cache.

The cache is derived, rebuildable, never truth. The source fingerprint
covers every manifest, the files it declares and the miner settings, so a
change to any of them marks the cache stale.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .common import PRODUCER, file_digest_ref, utc_now_z
from .paths import resolve_data_path


# Bump when the stored sample layout changes
CACHE_SCHEMA_VERSION = 1

# Key delimiter for LMDB keys
KEY_DELIMITER = "\x1f"  # Unit separator

# Key prefix for schema versioning
KEY_PREFIX = "v1"


@dataclass
class CacheMeta:
    """Metadata for the prepared-sample cache."""

    cache_schema_version: int
    datasets: list[str]
    source_fingerprint: str
    built_at: str
    producer: dict

    def to_dict(self) -> dict:
        return {
            "schema_name": "icad.cache_meta",
            "cache_schema_version": self.cache_schema_version,
            "datasets": self.datasets,
            "source_fingerprint": self.source_fingerprint,
            "built_at": self.built_at,
            "producer": self.producer,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CacheMeta":
        return cls(
            cache_schema_version=data["cache_schema_version"],
            datasets=list(data["datasets"]),
            source_fingerprint=data["source_fingerprint"],
            built_at=data["built_at"],
            producer=data["producer"],
        )


def _declared_files(manifest_path: Path) -> list[tuple[str, Path]]:
    """Data and label files a manifest points at, read without validation."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError):
        return []
    if not isinstance(data, dict):
        return []
    files = []
    for key in ("data_path", "label_path", "test_data_path", "test_label_path"):
        value = data.get(key)
        if isinstance(value, str) and value:
            files.append((key, resolve_data_path(manifest_path, value)))
    return files


def compute_source_fingerprint(
    manifest_paths: Sequence[Path],
    miner_settings: Optional[dict] = None,
) -> str:
    """Compute a stable fingerprint from the authoritative inputs.

    The fingerprint includes, in manifest order:
    - the hash of each manifest
    - the hashes of the data and label files it declares
    - the miner settings (text logs share one template inventory)

    Manifest order matters because template ids are assigned in parse order.

    Args:
        manifest_paths: Manifests in run order.
        miner_settings: Miner depth, threshold and extra patterns.

    Returns:
        Hex-encoded combined fingerprint.
    """
    hasher = hashlib.sha256()
    for n, manifest_path in enumerate(manifest_paths):
        manifest_path = Path(manifest_path)
        hasher.update(f"manifest:{n}:".encode())
        if not manifest_path.exists():
            hasher.update(b"missing")
            continue
        hasher.update(file_digest_ref(manifest_path).encode())
        for key, path in _declared_files(manifest_path):
            hasher.update(f"{key}:".encode())
            hasher.update(file_digest_ref(path).encode() if path.exists() else b"missing")

    hasher.update(b"miner:")
    hasher.update(json.dumps(miner_settings or {}, sort_keys=True).encode())
    return hasher.hexdigest()


def make_cache_key(*parts: str) -> bytes:
    """Create a cache key from parts with delimiter.

    Args:
        *parts: Key components (will be joined with delimiter).

    Returns:
        UTF-8 encoded key bytes.
    """
    return KEY_DELIMITER.join([KEY_PREFIX] + list(parts)).encode("utf-8")


def parse_cache_key(key: bytes) -> list[str]:
    """Parse a cache key into its parts, without the version prefix."""
    parts = key.decode("utf-8").split(KEY_DELIMITER)
    return parts[1:] if parts and parts[0] == KEY_PREFIX else parts


def create_cache_meta(dataset_ids: Sequence[str], source_fingerprint: str) -> CacheMeta:
    """Create cache metadata for a new cache build."""
    return CacheMeta(
        cache_schema_version=CACHE_SCHEMA_VERSION,
        datasets=list(dataset_ids),
        source_fingerprint=source_fingerprint,
        built_at=utc_now_z(),
        producer=PRODUCER,
    )


def is_cache_valid(
    cache_meta: CacheMeta,
    manifest_paths: Sequence[Path],
    miner_settings: Optional[dict] = None,
) -> bool:
    """Check if cache metadata matches the current sources.

    Returns:
        True if the cache is valid, False if stale.
    """
    if cache_meta.cache_schema_version != CACHE_SCHEMA_VERSION:
        return False
    return cache_meta.source_fingerprint == compute_source_fingerprint(
        manifest_paths, miner_settings
    )
