"""Evaluation metrics: AUROC, point-adjusted F1 and threshold sweeps.

Undefined inputs (a single class, mismatched lengths) raise instead of
returning sentinel values.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .common import PRODUCER, SCHEMA_VERSION, UndefinedMetricError


def _as_arrays(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if s.shape != y.shape:
        raise UndefinedMetricError(f"{s.shape[0]} scores for {y.shape[0]} labels")
    if not np.isin(y, (0, 1)).all():
        raise UndefinedMetricError("labels must be 0 or 1")
    if y.size == 0 or y.min() == y.max():
        raise UndefinedMetricError("both classes must be present")
    return s, y


def tied_rank(x: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    average = ends - (counts - 1) / 2.0
    return average[inverse]


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the rank-sum statistic.

    Raises:
        UndefinedMetricError: If only one class is present.
    """
    s, y = _as_arrays(scores, labels)
    ranks = tied_rank(s)
    positives = y == 1
    n_pos = int(positives.sum())
    n_neg = y.size - n_pos
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def anomaly_segments(labels: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal runs of label 1 as half-open (start, end) pairs."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    padded = np.concatenate([[0], y, [0]])
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def point_adjust(preds: Sequence[int], labels: Sequence[int]) -> np.ndarray:
    """Mark a whole anomalous segment detected if any of its points is flagged."""
    p = np.asarray(preds, dtype=np.int64).reshape(-1).copy()
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if p.shape != y.shape:
        raise UndefinedMetricError(f"{p.shape[0]} predictions for {y.shape[0]} labels")
    for start, end in anomaly_segments(y):
        if p[start:end].any():
            p[start:end] = 1
    return p


def f1_from_predictions(preds: np.ndarray, labels: np.ndarray) -> float:
    tp = int(np.sum((preds == 1) & (labels == 1)))
    if tp == 0:
        return 0.0
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    return 2.0 * tp / (2.0 * tp + fp + fn)


def f1_point_adjusted(scores: Sequence[float], labels: Sequence[int], threshold: float) -> float:
    """F1 of score >= threshold after point adjustment."""
    s, y = _as_arrays(scores, labels)
    preds = (s >= threshold).astype(np.int64)
    return f1_from_predictions(point_adjust(preds, y), y)


def best_f1_sweep(scores: Sequence[float], labels: Sequence[int]) -> tuple[float, float]:
    """Best point-adjusted F1 over every distinct score used as threshold.

    Returns:
        (best F1, threshold); ties go to the lowest threshold.
    """
    s, y = _as_arrays(scores, labels)
    best_f1, best_threshold = -1.0, float(s.min())
    for threshold in np.unique(s):
        value = f1_from_predictions(point_adjust((s >= threshold).astype(np.int64), y), y)
        if value > best_f1:
            best_f1, best_threshold = value, float(threshold)
    return best_f1, best_threshold


def expand_patch_scores(
    scores: Sequence[float], starts: Sequence[int], patch_len: int
) -> np.ndarray:
    """Point scores from patch scores: each point takes the max over covering patches.

    The result covers points [0, max(start) + patch_len); points covered by
    no patch get -inf.
    """
    scores = np.asarray(scores, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    length = int(starts.max()) + patch_len if starts.size else 0
    points = np.full(length, -np.inf)
    for score, start in zip(scores, starts):
        window = points[start : start + patch_len]
        np.maximum(window, score, out=window)
    return points


def class_summary(scores: Sequence[float], labels: Sequence[int]) -> dict:
    """Mean, std and count of scores per class."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    out = {}
    for name, value in (("normal", 0), ("anomalous", 1)):
        part = s[y == value]
        out[name] = {
            "count": int(part.size),
            "mean": float(part.mean()) if part.size else None,
            "std": float(part.std()) if part.size else None,
        }
    return out


def score_histogram(scores: Sequence[float], labels: Sequence[int], bins: int = 10) -> list[dict]:
    """Per-class counts over equal-width bins of [0, 1]."""
    s = np.clip(np.asarray(scores, dtype=np.float64), 0.0, 1.0)
    y = np.asarray(labels, dtype=np.int64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    normal, _ = np.histogram(s[y == 0], bins=edges)
    anomalous, _ = np.histogram(s[y == 1], bins=edges)
    return [
        {
            "bin_lo": float(edges[i]),
            "bin_hi": float(edges[i + 1]),
            "normal": int(normal[i]),
            "anomalous": int(anomalous[i]),
        }
        for i in range(bins)
    ]


@dataclass
class EvalReport:
    dataset_id: str
    metric: str
    value: float
    n_samples: int
    threshold: Optional[float] = None
    K: Optional[int] = None
    seed: Optional[int] = None
    summary: dict = field(default_factory=dict)
    histogram: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise UndefinedMetricError(f"{self.metric} value {self.value} outside [0, 1]")

    def to_dict(self) -> dict:
        data = {
            "schema_name": "icad.eval_report",
            "schema_version": SCHEMA_VERSION,
            "producer": PRODUCER,
            "dataset_id": self.dataset_id,
            "metric": self.metric,
            "value": self.value,
            "n_samples": self.n_samples,
            "threshold": self.threshold,
            "K": self.K,
            "seed": self.seed,
            "summary": self.summary,
        }
        if self.histogram:
            data["histogram"] = self.histogram
        return data
