"""Discrepancy scoring against a frozen reference set.

The score of a target is (1 - cos(h_R, h_x)) / 2, in [0, 1]; higher is
more anomalous. A sample is flagged when its score reaches the threshold.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .common import DataError, ModalityMismatchError, NumericError
from .ingest import DatasetHandle, Sample


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity over the last dimension, clamped to [-1, 1].

    Raises:
        NumericError: If either vector has zero norm.
    """
    aa = (a * a).sum(dim=-1)
    bb = (b * b).sum(dim=-1)
    if bool((aa == 0).any()) or bool((bb == 0).any()):
        raise NumericError("cosine similarity of a zero-norm vector")
    return ((a * b).sum(dim=-1) / torch.sqrt(aa * bb)).clamp(-1.0, 1.0)


@dataclass(frozen=True)
class DiscrepancyScore:
    value: float
    sample_key: Optional[tuple] = None
    reference_key: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise NumericError(f"discrepancy {self.value} outside [0, 1]")

    def to_record(self, threshold: Optional[float] = None) -> dict:
        record = {
            "dataset_id": self.sample_key[0] if self.sample_key else None,
            "sample_index": self.sample_key[2] if self.sample_key else None,
            "score": self.value,
        }
        if threshold is not None:
            record["decision"] = int(self.value >= threshold)
        return record


def discrepancy(h_ref, h_x) -> float:
    """(1 - cosine(h_ref, h_x)) / 2, computed at 64-bit precision.

    Raises:
        NumericError: If either vector has zero norm.
    """
    a = torch.as_tensor(h_ref).detach().to(torch.float64).reshape(-1)
    b = torch.as_tensor(h_x).detach().to(torch.float64).reshape(-1)
    value = (1.0 - float(cosine(a, b))) / 2.0
    return min(max(value, 0.0), 1.0)


def draw_reference_set(dataset: DatasetHandle, K: int, seed: int) -> list[Sample]:
    """Pick K train normals for inference, frozen per (dataset, seed).

    One seeded permutation is drawn and its first K entries taken, so sets
    for growing K are nested.

    Raises:
        DataError: If the dataset has fewer than K train normals.
    """
    normals = dataset.train_normals
    if K < 1 or len(normals) < K:
        raise DataError(
            f"{dataset.dataset_id} has {len(normals)} train normals, cannot draw K={K} references"
        )
    order = np.random.default_rng(seed).permutation(len(normals))
    return [normals[int(i)] for i in order[:K]]


def _reference_key(refs: Sequence[Sample]) -> tuple:
    return (refs[0].dataset_id, tuple(s.index for s in refs))


def _check_inputs(refs: Sequence[Sample], samples: Sequence[Sample]) -> None:
    if not refs:
        raise DataError("reference set is empty")
    modality = refs[0].modality
    for s in samples:
        if s.modality is not modality:
            raise ModalityMismatchError(
                f"sample {s.key} is {s.modality.value}, references are {modality.value}"
            )


SCORE_ROWS = 16


def score_batch(
    refs: Sequence[Sample],
    samples: Sequence[Sample],
    model,
    *,
    per_target_reference: bool = False,
    rows: int = SCORE_ROWS,
) -> list[DiscrepancyScore]:
    """Score samples against one reference set, in input order.

    Targets go through the backbone ``rows`` at a time, every forward padded
    to the same batch size and length, so a sample's score does not depend on
    which other samples share its batch. h_R is computed once from the
    [prompt; refs; REF] prefix and reused for every target. With
    ``per_target_reference`` it is read from each target's own inference
    sequence instead.
    """
    _check_inputs(refs, samples)
    if rows < 1:
        raise DataError(f"scoring batch size must be >= 1, got {rows}")
    ref_key = _reference_key(refs)
    model.eval()
    scores = []
    with torch.no_grad():
        e_ref = model.encode_reference_set(refs)
        n_tokens = model.encoder.tokens_per_sample(refs[0].modality)
        h_ref = model.reference_representation(e_ref, n_tokens, rows=rows)
        for start in range(0, len(samples), rows):
            chunk = list(samples[start : start + rows])
            reps = model.inference_batch(e_ref, chunk, rows=rows)
            for i, sample in enumerate(chunk):
                anchor = reps.h_ref[i] if per_target_reference else h_ref
                scores.append(DiscrepancyScore(discrepancy(anchor, reps.h_target[i]), sample.key, ref_key))
    return scores


def detect(refs: Sequence[Sample], sample: Sample, threshold: float, model) -> tuple[bool, DiscrepancyScore]:
    """Flag one sample: decision is score >= threshold."""
    score = score_batch(refs, [sample], model)[0]
    return score.value >= threshold, score
