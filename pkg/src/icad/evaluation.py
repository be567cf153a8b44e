"""Dataset-level evaluation and sensitivity sweeps."""

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .common import UndefinedMetricError
from .config import RunConfig
from .events import EventLog
from .ingest import DatasetHandle, Modality
from .metrics import (
    EvalReport,
    auroc,
    best_f1_sweep,
    class_summary,
    expand_patch_scores,
    score_histogram,
)
from .scorer import DiscrepancyScore, draw_reference_set, score_batch
from .trainer import fit

logger = logging.getLogger(__name__)

METRICS = ("auroc", "f1_pa")


def default_metric(modality: Modality) -> str:
    return "f1_pa" if Modality(modality) is Modality.TIME_SERIES else "auroc"


def _point_level(dataset: DatasetHandle, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand patch scores to the points of the test split."""
    starts = [s.start for s in dataset.test]
    patch_len = dataset.test[0].payload.shape[0]
    points = expand_patch_scores(values, starts, patch_len)
    labels = np.asarray(dataset.test_point_labels, dtype=np.int64)[: points.shape[0]]
    covered = np.isfinite(points)
    return points[covered], labels[covered]


def evaluate_dataset(
    model,
    dataset: DatasetHandle,
    *,
    K: int = 5,
    seed: int = 0,
    metric: Optional[str] = None,
    histogram_bins: int = 0,
) -> tuple[EvalReport, list[DiscrepancyScore]]:
    """Score the test split against a frozen reference set and compute a metric.

    Time series use point-adjusted F1 at point level by default; tabular and
    log data use AUROC over samples. Another metric may be requested; a
    mismatch only logs a warning.

    Raises:
        UndefinedMetricError: If the test split holds a single class.
    """
    metric = metric or default_metric(dataset.modality)
    if metric not in METRICS:
        raise UndefinedMetricError(f"unknown metric {metric!r}, expected one of {METRICS}")
    if metric != default_metric(dataset.modality):
        logger.warning(
            "metric %s is not the usual choice for %s data; proceeding",
            metric,
            dataset.modality.value,
        )
    if not dataset.test:
        raise UndefinedMetricError(f"{dataset.dataset_id} has no test samples")

    refs = draw_reference_set(dataset, K, seed)
    scores = score_batch(refs, dataset.test, model)
    values = np.array([s.value for s in scores])
    labels = dataset.test_labels

    threshold = None
    if metric == "auroc":
        value = auroc(values, labels)
    elif dataset.modality is Modality.TIME_SERIES and dataset.test_point_labels is not None:
        point_scores, point_labels = _point_level(dataset, values)
        value, threshold = best_f1_sweep(point_scores, point_labels)
    else:
        value, threshold = best_f1_sweep(values, labels)

    report = EvalReport(
        dataset_id=dataset.dataset_id,
        metric=metric,
        value=float(value),
        n_samples=len(scores),
        threshold=threshold,
        K=K,
        seed=seed,
        summary=class_summary(values, labels),
        histogram=score_histogram(values, labels, histogram_bins) if histogram_bins else [],
    )
    return report, scores


def sweep_k(
    model,
    datasets: Sequence[DatasetHandle],
    k_list: Sequence[int],
    *,
    seed: int = 0,
    metric: Optional[str] = None,
    events: Optional[EventLog] = None,
) -> list[dict]:
    """Evaluate one model at several reference sizes.

    References for each K are the first K of one seeded permutation, so
    sets for larger K contain the smaller ones.

    Returns:
        One row per (K, dataset) plus the per-K mean, in k_list order.
    """
    events = events or EventLog()
    rows = []
    for k in k_list:
        values = []
        for ds in datasets:
            report, _ = evaluate_dataset(model, ds, K=k, seed=seed, metric=metric)
            values.append(report.value)
            rows.append({"K": k, "dataset_id": ds.dataset_id, "metric": report.metric, "value": report.value})
        mean = float(np.mean(values)) if values else None
        rows.append({"K": k, "dataset_id": "*mean*", "metric": metric or "default", "value": mean})
        events.append("eval_completed", K=k, mean=mean, datasets=len(values))
    return rows


def steps_for_volume(volume: int, config: RunConfig, modalities: Sequence[Modality]) -> int:
    """Steps per epoch drawing about ``volume`` triplets."""
    sizes = [config.train.batch_sizes[m.value] for m in modalities] or [1]
    return max(1, math.ceil(volume / float(np.mean(sizes))))


def sweep_volume(
    datasets: Sequence[DatasetHandle],
    config: RunConfig,
    volumes: Sequence[int],
    *,
    eval_datasets: Optional[Sequence[DatasetHandle]] = None,
    metric: Optional[str] = None,
    out_dir: Optional[Path] = None,
    events: Optional[EventLog] = None,
) -> list[dict]:
    """Train one model per training volume (triplets per epoch), K fixed.

    Returns:
        One row per (volume, dataset) plus the per-volume mean.
    """
    events = events or EventLog()
    eval_datasets = list(eval_datasets) if eval_datasets is not None else list(datasets)
    modalities = sorted({ds.modality for ds in datasets}, key=lambda m: m.value)
    rows = []
    for volume in volumes:
        steps = steps_for_volume(volume, config, modalities)
        run = RunConfig.from_dict(config.to_dict())
        run.train = replace(run.train, steps_per_epoch=steps)
        run_dir = Path(out_dir) / f"volume_{volume}" if out_dir is not None else None
        result = fit(datasets, run, out_dir=run_dir, events=events)
        values = []
        for ds in eval_datasets:
            report, _ = evaluate_dataset(result.model, ds, K=run.train.K, seed=run.seed, metric=metric)
            values.append(report.value)
            rows.append(
                {"volume": volume, "steps_per_epoch": steps, "dataset_id": ds.dataset_id, "metric": report.metric, "value": report.value}
            )
        rows.append(
            {
                "volume": volume,
                "steps_per_epoch": steps,
                "dataset_id": "*mean*",
                "metric": metric or "default",
                "value": float(np.mean(values)) if values else None,
            }
        )
    return rows
