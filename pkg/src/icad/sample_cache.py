"""LMDB cache of prepared datasets.

The cache is derived, rebuildable, never truth. ``icad prep`` ingests the
manifests once and stores every prepared sample; later commands read the
samples back instead of re-parsing raw files while the source fingerprint
still matches.

Environment layout:
    <out>/prepared/
        data.mdb
        lock.mdb
        cache_meta.json
"""

import json
import logging
import os
import shutil
from pathlib import Path
from typing import Iterator, Optional, Sequence

import lmdb
import msgpack
import numpy as np

from .cache_meta import (
    CacheMeta,
    compute_source_fingerprint,
    create_cache_meta,
    is_cache_valid,
    make_cache_key,
    parse_cache_key,
)
from .ingest import DatasetHandle, Modality, Sample, load_dataset
from .log_miner import LogMiner

logger = logging.getLogger(__name__)


# DBI names
DBI_DATASETS = b"datasets"
DBI_SAMPLES = b"samples"

ALL_DBIS = [DBI_DATASETS, DBI_SAMPLES]

# Default LMDB map size (1GB)
DEFAULT_MAP_SIZE = 1024 * 1024 * 1024

# Sample groups as stored; the order is the handle's list order
GROUPS = ("train_normals", "train_anomalies", "test")


def _pack_sample(sample: Sample) -> bytes:
    return msgpack.packb(
        {
            "label": sample.label,
            "split": sample.split,
            "index": sample.index,
            "start": sample.start,
            "dtype": sample.payload.dtype.str,
            "shape": list(sample.payload.shape),
            "data": sample.payload.tobytes(),
        }
    )


def _unpack_sample(value: bytes, modality: Modality, dataset_id: str) -> Sample:
    data = msgpack.unpackb(value)
    payload = np.frombuffer(data["data"], dtype=np.dtype(data["dtype"])).reshape(data["shape"])
    return Sample(
        modality=modality,
        payload=payload.copy(),
        label=data["label"],
        dataset_id=dataset_id,
        split=data["split"],
        index=data["index"],
        start=data["start"],
    )


class CacheEnv:
    """LMDB environment wrapper for the prepared-sample cache."""

    def __init__(self, out_dir: Path, readonly: bool = True):
        """Initialize cache environment.

        Args:
            out_dir: Run output directory.
            readonly: Open in read-only mode (default True for readers).
        """
        self.out_dir = Path(out_dir)
        self.cache_dir = self.out_dir / "prepared"
        self.meta_path = self.cache_dir / "cache_meta.json"
        self.readonly = readonly
        self._env: Optional[lmdb.Environment] = None
        self._dbis: dict[bytes, object] = {}

    @property
    def exists(self) -> bool:
        return self.cache_dir.exists() and (self.cache_dir / "data.mdb").exists()

    def open(self) -> None:
        """Open the LMDB environment."""
        if self._env is not None:
            return
        if not self.exists and self.readonly:
            raise FileNotFoundError(f"Cache not found: {self.cache_dir}")
        if not self.readonly:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

        self._env = lmdb.open(
            str(self.cache_dir),
            map_size=DEFAULT_MAP_SIZE,
            max_dbs=len(ALL_DBIS),
            readonly=self.readonly,
            create=not self.readonly,
            subdir=True,
            lock=not self.readonly,
        )
        for dbi_name in ALL_DBIS:
            self._dbis[dbi_name] = self._env.open_db(dbi_name, create=not self.readonly)

    def close(self) -> None:
        if self._env is not None:
            self._env.close()
            self._env = None
            self._dbis.clear()

    def __enter__(self) -> "CacheEnv":
        self.open()
        return self

    def __exit__(self, *args) -> None:
        self.close()

    def get_dbi(self, name: bytes):
        if name not in self._dbis:
            raise ValueError(f"Unknown DBI: {name}")
        return self._dbis[name]

    @property
    def env(self) -> lmdb.Environment:
        if self._env is None:
            raise RuntimeError("Cache not open")
        return self._env

    def begin(self, write: bool = False) -> lmdb.Transaction:
        return self.env.begin(write=write)

    def load_meta(self) -> Optional[CacheMeta]:
        if not self.meta_path.exists():
            return None
        with open(self.meta_path, "r", encoding="utf-8") as f:
            return CacheMeta.from_dict(json.load(f))

    def save_meta(self, meta: CacheMeta) -> None:
        """Write metadata atomically; it is written last, after all samples."""
        temp_path = self.meta_path.with_suffix(f".tmp.{os.getpid()}")
        with open(temp_path, "w", encoding="utf-8") as f:
            json.dump(meta.to_dict(), f, indent=2)
        temp_path.replace(self.meta_path)

    def delete(self) -> None:
        """Delete the entire cache directory."""
        self.close()
        if self.cache_dir.exists():
            shutil.rmtree(self.cache_dir)


class CacheWriter:
    """Writes prepared datasets into an environment opened for writing."""

    def __init__(self, env: CacheEnv):
        self.env = env

    def put_dataset(self, dataset: DatasetHandle) -> int:
        """Store one dataset's metadata and samples in a single transaction.

        Returns:
            Number of samples written.
        """
        info = {
            "modality": dataset.modality.value,
            "size_points": dataset.size_points,
            "prep": dataset.prep,
            "scaling": dataset.scaling,
            "vocab_size": dataset.vocab_size,
            "test_point_labels": (
                None
                if dataset.test_point_labels is None
                else np.asarray(dataset.test_point_labels, dtype=np.int64).tolist()
            ),
            "counts": {group: len(getattr(dataset, group)) for group in GROUPS},
        }
        written = 0
        with self.env.begin(write=True) as txn:
            txn.put(
                make_cache_key(dataset.dataset_id),
                msgpack.packb(info),
                db=self.env.get_dbi(DBI_DATASETS),
            )
            samples_db = self.env.get_dbi(DBI_SAMPLES)
            for group in GROUPS:
                for position, sample in enumerate(getattr(dataset, group)):
                    key = make_cache_key(dataset.dataset_id, group, f"{position:010d}")
                    txn.put(key, _pack_sample(sample), db=samples_db)
                    written += 1
        return written


class CacheReader:
    """Reads prepared datasets back."""

    def __init__(self, env: CacheEnv):
        self.env = env

    def dataset_ids(self) -> list[str]:
        with self.env.begin() as txn:
            cursor = txn.cursor(db=self.env.get_dbi(DBI_DATASETS))
            return [parse_cache_key(key)[0] for key, _ in cursor]

    def _iter_group(self, txn, dataset_id: str, group: str) -> Iterator[bytes]:
        prefix = make_cache_key(dataset_id, group) + b"\x1f"
        cursor = txn.cursor(db=self.env.get_dbi(DBI_SAMPLES))
        if not cursor.set_range(prefix):
            return
        for key, value in cursor:
            if not key.startswith(prefix):
                break
            yield value

    def get_dataset(self, dataset_id: str) -> Optional[DatasetHandle]:
        """Rebuild a dataset handle, or None if it is not cached."""
        with self.env.begin() as txn:
            raw = txn.get(make_cache_key(dataset_id), db=self.env.get_dbi(DBI_DATASETS))
            if raw is None:
                return None
            info = msgpack.unpackb(raw)
            modality = Modality(info["modality"])
            groups = {
                group: [
                    _unpack_sample(value, modality, dataset_id)
                    for value in self._iter_group(txn, dataset_id, group)
                ]
                for group in GROUPS
            }
        for group, expected in info["counts"].items():
            if len(groups[group]) != expected:
                logger.warning(
                    "cache for %s holds %d %s, expected %d",
                    dataset_id,
                    len(groups[group]),
                    group,
                    expected,
                )
                return None
        labels = info["test_point_labels"]
        return DatasetHandle(
            dataset_id=dataset_id,
            modality=modality,
            train_normals=groups["train_normals"],
            train_anomalies=groups["train_anomalies"],
            test=groups["test"],
            size_points=info["size_points"],
            prep=info["prep"],
            scaling=info["scaling"],
            test_point_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
            vocab_size=info["vocab_size"],
        )


def _miner_settings(miner: Optional[LogMiner]) -> dict:
    if miner is None:
        return {}
    return {
        "depth": miner.tree.depth,
        "similarity_threshold": miner.tree.similarity_threshold,
        "extra_patterns": miner.extra_pattern_sources,
    }


def try_load_prepared(
    out_dir: Path,
    manifest_paths: Sequence[Path],
    miner: Optional[LogMiner] = None,
) -> Optional[list[DatasetHandle]]:
    """Read prepared datasets if a valid cache exists.

    Returns:
        Datasets in manifest order, or None if the cache is missing or stale.
    """
    env = CacheEnv(out_dir, readonly=True)
    if not env.exists:
        return None
    try:
        env.open()
        meta = env.load_meta()
        if meta is None or not is_cache_valid(meta, manifest_paths, _miner_settings(miner)):
            return None
        reader = CacheReader(env)
        datasets = []
        for dataset_id in meta.datasets:
            dataset = reader.get_dataset(dataset_id)
            if dataset is None:
                return None
            datasets.append(dataset)
        return datasets
    except lmdb.Error as e:
        logger.warning("prepared cache at %s is unreadable: %s", env.cache_dir, e)
        return None
    finally:
        env.close()


def build_prepared(
    out_dir: Path,
    manifest_paths: Sequence[Path],
    miner: Optional[LogMiner] = None,
) -> tuple[list[DatasetHandle], bool]:
    """Ingest manifests into the cache, reusing a valid cache untouched.

    Text logs of all manifests share ``miner``, so template ids agree
    across datasets.

    Returns:
        Tuple of (datasets in manifest order, whether the cache was rebuilt).

    Raises:
        DataError: If a manifest or its files are invalid.
    """
    cached = try_load_prepared(out_dir, manifest_paths, miner)
    if cached is not None:
        return cached, False

    fingerprint = compute_source_fingerprint(manifest_paths, _miner_settings(miner))
    datasets = [load_dataset(Path(p), miner) for p in manifest_paths]

    env = CacheEnv(out_dir, readonly=False)
    env.delete()
    with env:
        writer = CacheWriter(env)
        for dataset in datasets:
            n = writer.put_dataset(dataset)
            logger.debug("cached %d samples of %s", n, dataset.dataset_id)
        env.save_meta(create_cache_meta([d.dataset_id for d in datasets], fingerprint))
    return datasets, True
