"""Dataset ingestion: raw files to labeled samples.

Three preparation pipelines turn raw data into samples:
- Time series: an L x d_raw matrix is cut into patches of p rows.
- Tabular: each row is min-max scaled (train statistics) and padded or
  truncated to a fixed width F'.
- Logs: messages are mined into template ids, then cut into windows of w ids.

A patch or window is anomalous (label 1) if it covers at least one anomalous
point or line. Trailing remainders shorter than p (or w) are dropped.

Manifest format (JSON):
    {
      "dataset_id": "...",
      "modality": "time_series" | "tabular" | "log",
      "data_path": "data.csv",
      "label_path": "labels.txt",           # optional
      "log_format": "text" | "ids",         # logs only, default "text"
      "split": {"train_frac": 0.5},
      "prep": {"p": 16, "stride": 16, "F_prime": 16, "w": 20}
    }
"""

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .common import DataError, EmptyInputError, ManifestError, ShapeMismatchError
from .log_miner import LogMiner
from .paths import InvalidPathError, resolve_data_path, validate_dataset_id


class Modality(str, Enum):
    """Data modality of a sample or dataset."""

    TIME_SERIES = "time_series"
    TABULAR = "tabular"
    LOG = "log"


MODALITIES = (Modality.TIME_SERIES, Modality.TABULAR, Modality.LOG)

DEFAULT_TRAIN_FRAC = 0.5


# =============================================================================
# Raw inputs
# =============================================================================


def _check_labels(labels: Optional[np.ndarray], length: int, what: str) -> Optional[np.ndarray]:
    if labels is None:
        return None
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != length:
        raise DataError(f"{what} labels have length {labels.shape[0]}, expected {length}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"{what} labels must be 0 or 1")
    return labels


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.isfinite(values).all():
        raise DataError(f"non-finite values in {what}")


@dataclass(frozen=True, eq=False)
class RawTimeSeries:
    """A raw multivariate series, L rows by d_raw channels."""

    values: np.ndarray
    point_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DataError(f"time series must be L x d_raw with L, d_raw >= 1, got {values.shape}")
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self, "point_labels", _check_labels(self.point_labels, values.shape[0], "point")
        )

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class RawTable:
    """Raw tabular rows; row i has F_i >= 1 features."""

    rows: list
    row_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        rows = [np.asarray(r, dtype=np.float64).reshape(-1) for r in self.rows]
        for i, r in enumerate(rows):
            if r.shape[0] < 1:
                raise DataError(f"row {i} has no features")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "row_labels", _check_labels(self.row_labels, len(rows), "row"))


@dataclass(frozen=True, eq=False)
class RawLog:
    """Raw log messages in arrival order."""

    lines: list
    line_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "lines", [str(line) for line in self.lines])
        object.__setattr__(
            self, "line_labels", _check_labels(self.line_labels, len(self.lines), "line")
        )


# =============================================================================
# Samples and datasets
# =============================================================================


@dataclass(frozen=True, eq=False)
class Sample:
    """The unit of detection.

    Payload is a p x d_raw float matrix (time series), an F' float vector
    (tabular) or a length-w int vector of template ids (log). ``start`` is
    the offset of the sample in its split, in points, rows or lines.
    """

    modality: Modality
    payload: np.ndarray
    label: int
    dataset_id: str
    split: str = "train"
    index: int = 0
    start: int = 0

    def __post_init__(self):
        modality = Modality(self.modality)
        object.__setattr__(self, "modality", modality)
        if modality is Modality.LOG:
            payload = np.asarray(self.payload, dtype=np.int64)
            expected_ndim = 1
        else:
            payload = np.asarray(self.payload, dtype=np.float64)
            expected_ndim = 2 if modality is Modality.TIME_SERIES else 1
        if payload.ndim != expected_ndim:
            raise ShapeMismatchError(f"{modality.value} payload", f"{expected_ndim}-D", payload.shape)
        if self.label not in (0, 1):
            raise DataError(f"sample label must be 0 or 1, got {self.label}")
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)

    @property
    def key(self) -> tuple[str, str, int]:
        """Identity of the sample within its dataset."""
        return (self.dataset_id, self.split, self.index)

    def with_payload(self, payload: np.ndarray, label: int) -> "Sample":
        """Copy of this sample with a new payload and label (perturbations)."""
        return Sample(
            modality=self.modality,
            payload=payload,
            label=label,
            dataset_id=self.dataset_id,
            split="synthetic",
            index=self.index,
            start=self.start,
        )


@dataclass
class DatasetHandle:
    """A fully prepared dataset.

    Attributes:
        size_points: Size used by the sampling scheduler (train points for
            time series, train samples otherwise).
        test_point_labels: Point (or line) labels of the test split, used
            to expand sample scores for point-adjusted evaluation.
        vocab_size: Number of template ids known when the log was parsed.
    """

    dataset_id: str
    modality: Modality
    train_normals: list[Sample]
    train_anomalies: list[Sample]
    test: list[Sample]
    size_points: int
    prep: dict = field(default_factory=dict)
    scaling: Optional[dict] = None
    test_point_labels: Optional[np.ndarray] = None
    vocab_size: Optional[int] = None

    def __post_init__(self):
        self.modality = Modality(self.modality)
        for sample in self.train_normals + self.train_anomalies + self.test:
            if sample.dataset_id != self.dataset_id or sample.modality is not self.modality:
                raise DataError(
                    f"sample {sample.key} does not belong to {self.dataset_id}/{self.modality.value}"
                )
        if any(s.label != 0 for s in self.train_normals):
            raise DataError(f"train normals of {self.dataset_id} must carry label 0")

    @property
    def test_labels(self) -> np.ndarray:
        return np.array([s.label for s in self.test], dtype=np.int64)

    def summary(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "modality": self.modality.value,
            "train_normals": len(self.train_normals),
            "train_anomalies": len(self.train_anomalies),
            "test": len(self.test),
            "size_points": self.size_points,
        }


# =============================================================================
# Preparation operations
# =============================================================================


def patch_time_series(
    raw: RawTimeSeries,
    p: int,
    stride: Optional[int] = None,
    *,
    dataset_id: str = "",
    split: str = "test",
) -> list[Sample]:
    """Cut a series into patches of p rows.

    Args:
        raw: Input series.
        p: Patch length.
        stride: Step between patch starts (default p, non-overlapping).
        dataset_id: Owner dataset.
        split: Split name recorded on the samples.

    Returns:
        floor((L - p) / stride) + 1 samples of shape p x d_raw.

    Raises:
        EmptyInputError: If p > L.
        DataError: On non-finite values.
    """
    stride = p if stride is None else stride
    if p < 1 or stride < 1:
        raise DataError(f"patch length and stride must be >= 1, got p={p}, stride={stride}")
    if p > raw.length:
        raise EmptyInputError(f"patch length {p} exceeds series length {raw.length}")
    _check_finite(raw.values, "time series")

    count = (raw.length - p) // stride + 1
    samples = []
    for i in range(count):
        start = i * stride
        label = 0
        if raw.point_labels is not None:
            label = int(raw.point_labels[start : start + p].any())
        samples.append(
            Sample(
                modality=Modality.TIME_SERIES,
                payload=raw.values[start : start + p].copy(),
                label=label,
                dataset_id=dataset_id,
                split=split,
                index=i,
                start=start,
            )
        )
    return samples


def pad_truncate(row: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad or truncate a row to exactly ``width`` entries."""
    if width < 1:
        raise DataError(f"F' must be >= 1, got {width}")
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    _check_finite(row, "tabular row")
    if row.shape[0] >= width:
        return row[:width].copy()
    return np.concatenate([row, np.zeros(width - row.shape[0])])


def pad_truncate_row(
    row: np.ndarray,
    width: int,
    *,
    label: int = 0,
    dataset_id: str = "",
    split: str = "test",
    index: int = 0,
) -> Sample:
    """Map a row of F_i features to a tabular sample of width F'."""
    return Sample(
        modality=Modality.TABULAR,
        payload=pad_truncate(row, width),
        label=label,
        dataset_id=dataset_id,
        split=split,
        index=index,
        start=index,
    )


def window_logs(
    template_ids: Sequence[int],
    w: int,
    line_labels: Optional[Sequence[int]] = None,
    *,
    dataset_id: str = "",
    split: str = "test",
) -> list[Sample]:
    """Cut a template-id sequence into non-overlapping windows of w ids.

    Returns:
        floor(T / w) samples; empty when T < w.
    """
    if w < 1:
        raise DataError(f"window size must be >= 1, got {w}")
    ids = np.asarray(template_ids, dtype=np.int64).reshape(-1)
    if (ids < 0).any():
        raise DataError("template ids must be non-negative")
    labels = _check_labels(
        None if line_labels is None else np.asarray(line_labels), ids.shape[0], "line"
    )
    samples = []
    for i in range(ids.shape[0] // w):
        start = i * w
        label = int(labels[start : start + w].any()) if labels is not None else 0
        samples.append(
            Sample(
                modality=Modality.LOG,
                payload=ids[start : start + w].copy(),
                label=label,
                dataset_id=dataset_id,
                split=split,
                index=i,
                start=start,
            )
        )
    return samples


def minmax_fit(rows: Sequence[np.ndarray]) -> dict:
    """Per-column min and max over rows of possibly different widths."""
    width = max((r.shape[0] for r in rows), default=0)
    mins = np.full(width, np.inf)
    maxs = np.full(width, -np.inf)
    for r in rows:
        n = r.shape[0]
        mins[:n] = np.minimum(mins[:n], r)
        maxs[:n] = np.maximum(maxs[:n], r)
    # Columns never seen in training stay unscaled
    unseen = ~np.isfinite(mins)
    mins[unseen] = 0.0
    maxs[unseen] = 1.0
    return {"min": mins.tolist(), "max": maxs.tolist()}


def minmax_apply(row: np.ndarray, scaling: dict) -> np.ndarray:
    """Scale a row with train statistics; columns past the fitted width pass through."""
    mins = np.asarray(scaling["min"], dtype=np.float64)
    maxs = np.asarray(scaling["max"], dtype=np.float64)
    n = min(row.shape[0], mins.shape[0])
    out = row.astype(np.float64).copy()
    span = maxs[:n] - mins[:n]
    safe = np.where(span > 0, span, 1.0)
    out[:n] = (row[:n] - mins[:n]) / safe
    return out


def _split_and_label(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    normals = [s for s in samples if s.label == 0]
    anomalies = [s for s in samples if s.label == 1]
    return normals, anomalies


def _split_count(n: int, train_frac: float) -> int:
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must be in (0, 1), got {train_frac}")
    return int(n * train_frac)


def prepare_time_series(
    raw: RawTimeSeries,
    dataset_id: str,
    p: int,
    stride: Optional[int] = None,
    train_frac: float = DEFAULT_TRAIN_FRAC,
    test_series: Optional[RawTimeSeries] = None,
) -> DatasetHandle:
    """Split a series in time and patch both parts.

    When `test_series` is given the split is predefined: all of `raw` is
    train, `test_series` is the test split and `train_frac` is not used.
    """
    stride = p if stride is None else stride
    if test_series is not None:
        if test_series.values.shape[1] != raw.values.shape[1]:
            raise DataError(
                f"test series has {test_series.values.shape[1]} channels, train has {raw.values.shape[1]}"
            )
        train_raw, test_raw = raw, test_series
        train_frac = 1.0
    else:
        cut = _split_count(raw.length, train_frac)
        labels = raw.point_labels
        train_raw = RawTimeSeries(raw.values[:cut], None if labels is None else labels[:cut])
        test_raw = RawTimeSeries(raw.values[cut:], None if labels is None else labels[cut:])

    train = patch_time_series(train_raw, p, stride, dataset_id=dataset_id, split="train")
    test = patch_time_series(test_raw, p, stride, dataset_id=dataset_id, split="test")
    normals, anomalies = _split_and_label(train)
    return DatasetHandle(
        dataset_id=dataset_id,
        modality=Modality.TIME_SERIES,
        train_normals=normals,
        train_anomalies=anomalies,
        test=test,
        size_points=train_raw.length,
        prep={"p": p, "stride": stride, "train_frac": train_frac},
        test_point_labels=(
            test_raw.point_labels
            if test_raw.point_labels is not None
            else np.zeros(test_raw.length, dtype=np.int64)
        ),
    )


def prepare_table(
    raw: RawTable,
    dataset_id: str,
    width: int,
    train_frac: float = DEFAULT_TRAIN_FRAC,
) -> DatasetHandle:
    """Split rows, scale with train statistics, then pad or truncate."""
    n_train = _split_count(len(raw.rows), train_frac)
    if n_train < 1 or n_train >= len(raw.rows):
        raise EmptyInputError(f"table of {len(raw.rows)} rows cannot be split at {train_frac}")
    scaling = minmax_fit(raw.rows[:n_train])
    labels = raw.row_labels if raw.row_labels is not None else np.zeros(len(raw.rows), dtype=np.int64)

    train, test = [], []
    for i, row in enumerate(raw.rows):
        split = "train" if i < n_train else "test"
        index = i if i < n_train else i - n_train
        sample = pad_truncate_row(
            minmax_apply(row, scaling),
            width,
            label=int(labels[i]),
            dataset_id=dataset_id,
            split=split,
            index=index,
        )
        (train if split == "train" else test).append(sample)

    normals, anomalies = _split_and_label(train)
    return DatasetHandle(
        dataset_id=dataset_id,
        modality=Modality.TABULAR,
        train_normals=normals,
        train_anomalies=anomalies,
        test=test,
        size_points=len(train),
        prep={"F_prime": width, "train_frac": train_frac},
        scaling=scaling,
        test_point_labels=labels[n_train:].copy(),
    )


def prepare_log_ids(
    template_ids: Sequence[int],
    dataset_id: str,
    w: int,
    line_labels: Optional[Sequence[int]] = None,
    train_frac: float = DEFAULT_TRAIN_FRAC,
    vocab_size: Optional[int] = None,
) -> DatasetHandle:
    """Window a template-id sequence and split windows in order."""
    windows = window_logs(template_ids, w, line_labels, dataset_id=dataset_id, split="all")
    if not windows:
        raise EmptyInputError(f"log of {len(template_ids)} lines yields no window of {w}")
    n_train = _split_count(len(windows), train_frac)

    def relabel(s: Sample, split: str, index: int) -> Sample:
        return Sample(s.modality, s.payload, s.label, dataset_id, split, index, index * w)

    train = [relabel(s, "train", i) for i, s in enumerate(windows[:n_train])]
    test = [relabel(s, "test", i) for i, s in enumerate(windows[n_train:])]
    normals, anomalies = _split_and_label(train)

    ids = np.asarray(template_ids, dtype=np.int64)
    if vocab_size is None:
        vocab_size = int(ids.max()) + 1 if ids.size else 0
    test_lines = None
    if line_labels is not None:
        labels = np.asarray(line_labels, dtype=np.int64)
        test_lines = labels[n_train * w : len(windows) * w].copy()
    return DatasetHandle(
        dataset_id=dataset_id,
        modality=Modality.LOG,
        train_normals=normals,
        train_anomalies=anomalies,
        test=test,
        size_points=len(train),
        prep={"w": w, "train_frac": train_frac},
        test_point_labels=test_lines,
        vocab_size=vocab_size,
    )


def prepare_log(
    raw: RawLog,
    dataset_id: str,
    w: int,
    train_frac: float = DEFAULT_TRAIN_FRAC,
    miner: Optional[LogMiner] = None,
) -> DatasetHandle:
    """Mine messages into template ids, then window them."""
    miner = miner if miner is not None else LogMiner()
    ids, templates = miner.parse_corpus(raw.lines)
    return prepare_log_ids(
        ids, dataset_id, w, raw.line_labels, train_frac, vocab_size=len(templates)
    )


# =============================================================================
# File readers
# =============================================================================

_DELIMITER = re.compile(r"[,\s;]+")


def read_numeric_rows(path: Path) -> list[np.ndarray]:
    """Read delimited numeric text, one row per line.

    Blank lines and lines starting with '#' are skipped.

    Raises:
        DataError: On unparsable or non-finite values.
    """
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = np.array([float(v) for v in _DELIMITER.split(line) if v], dtype=np.float64)
            except ValueError as e:
                raise DataError(f"line {lineno}: {e}", path)
            if not np.isfinite(row).all():
                raise DataError(f"line {lineno}: non-finite value", path)
            rows.append(row)
    return rows


def read_labels(path: Path) -> np.ndarray:
    """Read one 0/1 label per line."""
    path = Path(path)
    labels = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DataError(f"line {lineno}: label must be 0 or 1, got {line!r}", path)
            labels.append(int(line))
    return np.array(labels, dtype=np.int64)


def read_log_lines(path: Path) -> list[str]:
    """Read raw log text, one message per line."""
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        return f.read().splitlines()


# =============================================================================
# Manifests
# =============================================================================

_MANIFEST_KEYS = {
    "dataset_id",
    "modality",
    "data_path",
    "label_path",
    "test_data_path",
    "test_label_path",
    "log_format",
    "split",
    "prep",
}
_PREP_KEYS = {"p", "stride", "F_prime", "w"}
_REQUIRED_PREP = {
    Modality.TIME_SERIES: ("p",),
    Modality.TABULAR: ("F_prime",),
    Modality.LOG: ("w",),
}


@dataclass(frozen=True)
class Manifest:
    """A validated dataset manifest."""

    path: Path
    dataset_id: str
    modality: Modality
    data_path: Path
    label_path: Optional[Path]
    train_frac: float
    prep: dict
    log_format: str = "text"
    test_data_path: Optional[Path] = None
    test_label_path: Optional[Path] = None


def load_manifest(manifest_path: Path) -> Manifest:
    """Read and validate a manifest.

    Raises:
        ManifestError: If the manifest is missing or its schema is wrong.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError("manifest does not exist", manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"invalid JSON in manifest: {e}", manifest_path)
    if not isinstance(data, dict):
        raise ManifestError("manifest must be a JSON object", manifest_path)

    unknown = set(data) - _MANIFEST_KEYS
    if unknown:
        raise ManifestError(f"unknown manifest keys: {sorted(unknown)}", manifest_path)
    for key in ("dataset_id", "modality", "data_path"):
        if key not in data:
            raise ManifestError(f"missing required key '{key}'", manifest_path)

    try:
        dataset_id = validate_dataset_id(data["dataset_id"])
    except InvalidPathError as e:
        raise ManifestError(str(e), manifest_path)
    try:
        modality = Modality(data["modality"])
    except ValueError:
        raise ManifestError(f"unknown modality: {data['modality']}", manifest_path)

    split = data.get("split", {})
    if not isinstance(split, dict) or set(split) - {"train_frac"}:
        raise ManifestError("split accepts only 'train_frac'", manifest_path)
    train_frac = float(split.get("train_frac", DEFAULT_TRAIN_FRAC))
    if not 0.0 < train_frac < 1.0:
        raise ManifestError(f"train_frac must be in (0, 1), got {train_frac}", manifest_path)

    prep = data.get("prep", {})
    if not isinstance(prep, dict) or set(prep) - _PREP_KEYS:
        raise ManifestError(f"prep accepts only {sorted(_PREP_KEYS)}", manifest_path)
    for key in _REQUIRED_PREP[modality]:
        if key not in prep:
            raise ManifestError(f"{modality.value} manifests need prep.{key}", manifest_path)
    for key, value in prep.items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ManifestError(f"prep.{key} must be a positive integer", manifest_path)

    log_format = data.get("log_format", "text")
    if log_format not in ("text", "ids"):
        raise ManifestError(f"log_format must be 'text' or 'ids', got {log_format}", manifest_path)

    test_data_path = data.get("test_data_path")
    test_label_path = data.get("test_label_path")
    if test_label_path and not test_data_path:
        raise ManifestError("test_label_path needs test_data_path", manifest_path)
    if test_data_path and modality is not Modality.TIME_SERIES:
        raise ManifestError("test_data_path is only supported for time series", manifest_path)

    label_path = data.get("label_path")
    return Manifest(
        path=manifest_path,
        dataset_id=dataset_id,
        modality=modality,
        data_path=resolve_data_path(manifest_path, data["data_path"]),
        label_path=resolve_data_path(manifest_path, label_path) if label_path else None,
        train_frac=train_frac,
        prep=dict(prep),
        log_format=log_format,
        test_data_path=resolve_data_path(manifest_path, test_data_path) if test_data_path else None,
        test_label_path=resolve_data_path(manifest_path, test_label_path) if test_label_path else None,
    )


def _read_series(path: Path, labels: Optional[np.ndarray]) -> RawTimeSeries:
    rows = read_numeric_rows(path)
    if not rows:
        raise EmptyInputError("empty series", path)
    widths = {r.shape[0] for r in rows}
    if len(widths) != 1:
        raise DataError(f"series rows have differing widths {sorted(widths)}", path)
    return RawTimeSeries(np.vstack(rows), labels)


def load_dataset(manifest_path: Path, miner: Optional[LogMiner] = None) -> DatasetHandle:
    """Load and prepare the dataset a manifest declares.

    Args:
        manifest_path: Path to the manifest JSON.
        miner: Shared template miner for text logs (a fresh one if None).

    Returns:
        Prepared dataset with deterministic sample ordering.

    Raises:
        ManifestError: On schema problems.
        DataError: On missing files or label/feature length mismatch.
    """
    manifest = load_manifest(manifest_path)
    declared = (manifest.data_path, manifest.label_path, manifest.test_data_path, manifest.test_label_path)
    for path in declared:
        if path is not None and not path.exists():
            raise DataError("file declared by manifest does not exist", path)

    labels = read_labels(manifest.label_path) if manifest.label_path else None

    try:
        if manifest.modality is Modality.TIME_SERIES:
            test_series = None
            if manifest.test_data_path is not None:
                test_labels = read_labels(manifest.test_label_path) if manifest.test_label_path else None
                test_series = _read_series(manifest.test_data_path, test_labels)
            return prepare_time_series(
                _read_series(manifest.data_path, labels),
                manifest.dataset_id,
                manifest.prep["p"],
                manifest.prep.get("stride"),
                manifest.train_frac,
                test_series,
            )

        if manifest.modality is Modality.TABULAR:
            raw = RawTable(read_numeric_rows(manifest.data_path), labels)
            return prepare_table(raw, manifest.dataset_id, manifest.prep["F_prime"], manifest.train_frac)

        if manifest.log_format == "ids":
            ids = [int(r[0]) for r in read_numeric_rows(manifest.data_path)]
            if labels is not None and len(labels) != len(ids):
                raise DataError(f"{len(labels)} labels for {len(ids)} log lines", manifest.label_path)
            return prepare_log_ids(ids, manifest.dataset_id, manifest.prep["w"], labels, manifest.train_frac)

        raw = RawLog(read_log_lines(manifest.data_path), labels)
        return prepare_log(raw, manifest.dataset_id, manifest.prep["w"], manifest.train_frac, miner)
    except DataError as e:
        if e.path is None:
            raise e.with_path(manifest.path) from e
        raise
