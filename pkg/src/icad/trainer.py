"""Contrastive training over reference/positive/negative triplets.

Each step draws a modality, then builds a batch of triplets from that
modality's datasets:

- refs: K distinct train normals of a dataset chosen proportionally to size
- positive: another normal of the same dataset
- negative: a normal from a different dataset of the same modality
  (simple) or an anomaly of the source dataset (hard), in a configurable
  ratio. Datasets without train anomalies get a perturbed normal instead.

The loss is a cosine-similarity margin loss on the REF/TGT/NEG readouts.
"""

import logging
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .common import (
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    TripletError,
    file_digest_ref,
)
from .config import ModelConfig, RunConfig, TrainConfig
from .events import EventLog, MetricLog
from .ingest import MODALITIES, DatasetHandle, Modality, Sample
from .model import ICADModel, resolve_model_config
from .scorer import cosine

logger = logging.getLogger(__name__)


SPIKE_SIGMAS = 6.0
SWAP_FRACTION = 0.3
REPLACE_FRACTION = 0.3


def set_deterministic(seed: int) -> None:
    """Seed python, numpy and torch, and pin deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)
    torch.backends.cudnn.deterministic = True
    torch.backends.cudnn.benchmark = False


# =============================================================================
# Loss
# =============================================================================


def ccl_loss(
    h_ref: torch.Tensor,
    h_pos: torch.Tensor,
    h_neg: torch.Tensor,
    alpha: float,
    form: str = "corrected",
) -> torch.Tensor:
    """Margin loss between reference, positive and negative readouts.

    The corrected form is max(s(R, neg) - s(R, pos) + alpha, 0): zero once the
    positive is at least alpha more similar to the references than the
    negative. The printed form swaps the two similarities.

    Returns:
        Per-triplet losses with the batch shape of the inputs.
    """
    if not alpha > 0:
        raise ConfigError("train.alpha", f"must be > 0, got {alpha}")
    s_pos = cosine(h_ref, h_pos)
    s_neg = cosine(h_ref, h_neg)
    if form == "corrected":
        gap = s_neg - s_pos
    elif form == "printed":
        gap = s_pos - s_neg
    else:
        raise ConfigError("train.loss_form", f"unknown loss form {form!r}")
    return torch.clamp(gap + alpha, min=0.0)


# =============================================================================
# Triplets
# =============================================================================


class NegativeKind(str, Enum):
    SIMPLE = "simple"
    HARD = "hard"


@dataclass(frozen=True)
class ReferenceSet:
    """K normal samples of one dataset, in selection order."""

    samples: tuple
    dataset_id: str

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise ContractError("reference set needs K >= 1 samples")
        for s in self.samples:
            if s.label != 0:
                raise ContractError(f"reference sample {s.key} is not normal")
            if s.dataset_id != self.dataset_id:
                raise ContractError(f"reference sample {s.key} is not from {self.dataset_id}")

    @property
    def K(self) -> int:
        return len(self.samples)

    @property
    def modality(self) -> Modality:
        return self.samples[0].modality

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


@dataclass(frozen=True)
class Triplet:
    refs: ReferenceSet
    positive: Sample
    negative: Sample
    negative_kind: NegativeKind
    synthetic: bool = False

    def ids(self) -> dict:
        return {
            "refs": [list(s.key) for s in self.refs],
            "positive": list(self.positive.key),
            "negative": list(self.negative.key),
            "kind": self.negative_kind.value,
        }


def triplet_violations(triplet: Triplet) -> list[str]:
    """List every invariant the triplet breaks (empty when valid)."""
    problems = []
    refs, pos, neg = triplet.refs, triplet.positive, triplet.negative
    ref_keys = {s.key for s in refs}
    if len(ref_keys) != len(refs):
        problems.append("reference samples are not distinct")
    if pos.dataset_id != refs.dataset_id:
        problems.append("positive comes from another dataset")
    if pos.key in ref_keys:
        problems.append("positive is a reference member")
    if pos.label != 0:
        problems.append("positive is not normal")
    if len({s.modality for s in (*refs, pos, neg)}) != 1:
        problems.append("modalities differ")
    if triplet.negative_kind is NegativeKind.SIMPLE:
        if neg.dataset_id == refs.dataset_id:
            problems.append("simple negative comes from the source dataset")
        if neg.label != 0:
            problems.append("simple negative is not normal")
    else:
        if neg.dataset_id != refs.dataset_id:
            problems.append("hard negative comes from another dataset")
        if neg.label != 1:
            problems.append("hard negative is not anomalous")
    return problems


def validate_triplet(triplet: Triplet) -> Triplet:
    """Raise TripletError if any invariant is broken."""
    problems = triplet_violations(triplet)
    if problems:
        raise TripletError(problems)
    return triplet


# =============================================================================
# Scheduling
# =============================================================================


class SamplingScheduler:
    """Draws a modality, then a dataset proportionally to its size.

    Time-series sizes are floored at ``time_size_floor`` points. In universal
    mode each modality present is equally likely; in task-specific mode only
    the configured modality is drawn.
    """

    def __init__(
        self,
        sizes: dict[str, tuple[Modality, int]],
        mode: str = "universal",
        modality: Optional[Modality] = None,
        time_size_floor: int = 0,
    ):
        if mode not in ("universal", "task_specific"):
            raise ConfigError("mode", f"unknown mode {mode!r}")
        if mode == "task_specific" and modality is None:
            raise ConfigError("modality", "required for task_specific mode")
        self.mode = mode
        self._by_modality: dict[Modality, tuple[list[str], np.ndarray]] = {}
        for m in MODALITIES:
            if mode == "task_specific" and m is not Modality(modality):
                continue
            ids = sorted(d for d, (dm, _) in sizes.items() if dm is m)
            if not ids:
                continue
            effective = np.array(
                [
                    max(sizes[d][1], time_size_floor) if m is Modality.TIME_SERIES else sizes[d][1]
                    for d in ids
                ],
                dtype=np.float64,
            )
            if effective.sum() <= 0:
                continue
            self._by_modality[m] = (ids, effective / effective.sum())
        if not self._by_modality:
            raise DataError("no eligible dataset to train on")
        self.modalities = list(self._by_modality)

    def modality_probabilities(self) -> dict[Modality, float]:
        share = 1.0 / len(self.modalities)
        return {m: share for m in self.modalities}

    def dataset_probabilities(self, modality: Modality) -> dict[str, float]:
        ids, probs = self._by_modality[modality]
        return dict(zip(ids, probs.tolist()))

    def probabilities(self) -> dict[str, float]:
        """Overall probability of drawing each dataset in one step."""
        out = {}
        for m, share in self.modality_probabilities().items():
            for d, p in self.dataset_probabilities(m).items():
                out[d] = share * p
        return out

    def draw_modality(self, rng: np.random.Generator) -> Modality:
        return self.modalities[int(rng.integers(len(self.modalities)))]

    def draw_dataset(self, modality: Modality, rng: np.random.Generator) -> str:
        ids, probs = self._by_modality[modality]
        return ids[int(rng.choice(len(ids), p=probs))]


# =============================================================================
# Triplet sampling
# =============================================================================


def perturb_sample(
    sample: Sample,
    rng: np.random.Generator,
    *,
    channel_std: Optional[np.ndarray] = None,
    donor: Optional[Sample] = None,
    vocab_size: int = 0,
) -> Sample:
    """Synthesize an anomaly from a normal sample.

    - time series: a spike of 6 train standard deviations at one position
    - tabular: 30% of features replaced by those of another row
    - log: 30% of ids replaced by uniformly drawn inventory ids
    """
    payload = np.array(sample.payload, copy=True)
    if sample.modality is Modality.TIME_SERIES:
        std = channel_std if channel_std is not None else payload.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        pos = int(rng.integers(payload.shape[0]))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        payload[pos] += sign * SPIKE_SIGMAS * std
    elif sample.modality is Modality.TABULAR:
        if donor is None:
            raise DataError("tabular perturbation needs a donor row")
        n = max(1, math.ceil(SWAP_FRACTION * payload.shape[0]))
        idx = rng.choice(payload.shape[0], size=n, replace=False)
        payload[idx] = donor.payload[idx]
    else:
        n = max(1, math.ceil(REPLACE_FRACTION * payload.shape[0]))
        idx = rng.choice(payload.shape[0], size=n, replace=False)
        payload[idx] = rng.integers(max(vocab_size, 1), size=n)
    return sample.with_payload(payload, label=1)


class TripletSampler:
    """Builds valid triplets from prepared datasets.

    Datasets with fewer than K + 1 train normals are excluded with a
    warning. A modality with a single dataset cannot provide simple
    negatives; all its negatives become hard ones, with one warning.
    """

    def __init__(
        self,
        datasets: Sequence[DatasetHandle],
        config: TrainConfig,
        mode: str = "universal",
        modality: Optional[Modality] = None,
        events: Optional[EventLog] = None,
    ):
        self.config = config
        self.events = events or EventLog()
        self.datasets: dict[str, DatasetHandle] = {}
        self.excluded: list[str] = []
        for ds in datasets:
            if len(ds.train_normals) < config.K + 1:
                logger.warning(
                    "excluding %s: %d train normals, need K+1=%d",
                    ds.dataset_id,
                    len(ds.train_normals),
                    config.K + 1,
                )
                self.events.append(
                    "dataset_excluded",
                    dataset_id=ds.dataset_id,
                    reason=f"{len(ds.train_normals)} train normals < K+1={config.K + 1}",
                )
                self.excluded.append(ds.dataset_id)
                continue
            self.datasets[ds.dataset_id] = ds

        self.scheduler = SamplingScheduler(
            {d: (ds.modality, ds.size_points) for d, ds in self.datasets.items()},
            mode=mode,
            modality=modality,
            time_size_floor=config.time_size_floor,
        )
        weights = config.simple_hard_ratio
        self.simple_probability = weights[0] / (weights[0] + weights[1])

        self._peers: dict[str, list[str]] = {}
        for d, ds in self.datasets.items():
            # Simple negatives may come from any same-modality dataset with normals
            self._peers[d] = sorted(
                o for o, other in self.datasets.items() if o != d and other.modality is ds.modality
            )
        self.single_dataset_modalities = sorted(
            {ds.modality.value for d, ds in self.datasets.items() if not self._peers[d]}
        )
        for m in self.single_dataset_modalities:
            logger.warning("modality %s has a single dataset; simple negatives become hard", m)

        self._channel_std: dict[str, np.ndarray] = {}

    def _time_std(self, ds: DatasetHandle) -> np.ndarray:
        if ds.dataset_id not in self._channel_std:
            stacked = np.concatenate([s.payload for s in ds.train_normals + ds.train_anomalies])
            self._channel_std[ds.dataset_id] = stacked.std(axis=0)
        return self._channel_std[ds.dataset_id]

    def _hard_negative(self, ds: DatasetHandle, rng: np.random.Generator) -> tuple[Sample, bool]:
        if ds.train_anomalies:
            return ds.train_anomalies[int(rng.integers(len(ds.train_anomalies)))], False
        n = len(ds.train_normals)
        i = int(rng.integers(n))
        base = ds.train_normals[i]
        if ds.modality is Modality.TIME_SERIES:
            return perturb_sample(base, rng, channel_std=self._time_std(ds)), True
        if ds.modality is Modality.TABULAR:
            # Donor is never the base row itself
            donor = ds.train_normals[(i + 1 + int(rng.integers(n - 1))) % n]
            return perturb_sample(base, rng, donor=donor), True
        return perturb_sample(base, rng, vocab_size=ds.vocab_size or 0), True

    def sample(self, rng: np.random.Generator, modality: Optional[Modality] = None) -> Triplet:
        """Draw one triplet (from ``modality`` if given)."""
        if modality is None:
            modality = self.scheduler.draw_modality(rng)
        ds = self.datasets[self.scheduler.draw_dataset(modality, rng)]
        k = self.config.K
        picks = rng.choice(len(ds.train_normals), size=k + 1, replace=False)
        refs = ReferenceSet(tuple(ds.train_normals[int(i)] for i in picks[:k]), ds.dataset_id)
        positive = ds.train_normals[int(picks[k])]

        peers = self._peers[ds.dataset_id]
        want_simple = rng.random() < self.simple_probability
        if want_simple and peers:
            other = self.datasets[peers[int(rng.integers(len(peers)))]]
            negative = other.train_normals[int(rng.integers(len(other.train_normals)))]
            return Triplet(refs, positive, negative, NegativeKind.SIMPLE)
        negative, synthetic = self._hard_negative(ds, rng)
        return Triplet(refs, positive, negative, NegativeKind.HARD, synthetic)

    def sample_batch(self, rng: np.random.Generator) -> tuple[Modality, list[Triplet]]:
        """Draw a modality, then a batch of that modality's size."""
        modality = self.scheduler.draw_modality(rng)
        size = self.config.batch_sizes[modality.value]
        return modality, [self.sample(rng, modality) for _ in range(size)]


# =============================================================================
# Optimization
# =============================================================================


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.betas, weight_decay=0.0
    )


def train_step(
    model: ICADModel,
    optimizer: torch.optim.Optimizer,
    triplets: Sequence[Triplet],
    config: TrainConfig,
) -> float:
    """One optimizer step on a batch of same-modality triplets.

    Returns:
        Mean loss of the batch before the update.

    Raises:
        NumericError: If the loss is non-finite; parameters are left untouched.
    """
    if not triplets:
        raise ContractError("empty triplet batch")
    if len({t.positive.modality for t in triplets}) != 1:
        raise ContractError("triplets in one step must share a modality")

    model.train()
    reps = model.train_representations(
        [t.refs.samples for t in triplets],
        [t.positive for t in triplets],
        [t.negative for t in triplets],
    )
    losses = ccl_loss(reps.h_ref, reps.h_target, reps.h_negative, config.alpha, config.loss_form)
    loss = losses.mean()
    if not torch.isfinite(loss):
        bad = [t.ids() for t, v in zip(triplets, losses.detach()) if not torch.isfinite(v)]
        raise NumericError("non-finite training loss", {"triplets": bad[:8]})

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return float(loss.detach())


@dataclass
class EpochStats:
    epoch: int
    steps: int
    mean: float
    std: float
    minimum: float
    maximum: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "steps": self.steps,
            "loss_mean": self.mean,
            "loss_std": self.std,
            "loss_min": self.minimum,
            "loss_max": self.maximum,
        }


@dataclass
class FitResult:
    model: ICADModel
    checkpoint: Checkpoint
    epochs: list[EpochStats] = field(default_factory=list)
    excluded: list[str] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None


def _epoch_stats(epoch: int, losses: list[float]) -> EpochStats:
    if not losses:
        return EpochStats(epoch, 0, 0.0, 0.0, 0.0, 0.0)
    arr = np.asarray(losses, dtype=np.float64)
    return EpochStats(epoch, len(losses), float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max()))


def fit(
    datasets: Sequence[DatasetHandle],
    config: RunConfig,
    *,
    out_dir: Optional[Path] = None,
    events: Optional[EventLog] = None,
    resume: Optional[Checkpoint] = None,
    inventory_path: Optional[Path] = None,
) -> FitResult:
    """Train a model on the prepared datasets.

    Args:
        datasets: Prepared datasets; those listed in ``config.holdout`` are skipped.
        config: Validated run configuration.
        out_dir: Where checkpoints and the loss log go (nothing written if None).
        events: Event log for run facts.
        resume: Checkpoint to continue from; training resumes at its epoch.
        inventory_path: Template inventory shared by the log datasets.

    Returns:
        The trained model and its final checkpoint.
    """
    events = events or EventLog()
    train_cfg = config.train
    holdout = set(config.holdout)
    training = [ds for ds in datasets if ds.dataset_id not in holdout]
    modality = Modality(config.modality) if config.modality else None
    if config.mode == "task_specific":
        training = [ds for ds in training if ds.modality is modality]
    if not training:
        raise DataError("no dataset left to train on")

    set_deterministic(config.seed)
    sampler = TripletSampler(training, train_cfg, config.mode, modality, events)

    if resume is not None:
        model_config = ModelConfig.from_dict(resume.model_config)
        model = ICADModel(model_config)
        resume.restore_model(model)
        optimizer = make_optimizer(model, train_cfg)
        if resume.optimizer is not None:
            resume.restore_optimizer(optimizer)
        rng = resume.restore_rng() or np.random.default_rng(config.seed)
        start_epoch, step = resume.epoch, resume.step
    else:
        model_config = resolve_model_config(config.model, training)
        model = ICADModel(model_config)
        optimizer = make_optimizer(model, train_cfg)
        rng = np.random.default_rng(config.seed)
        start_epoch, step = 0, 0

    inventory_ref = file_digest_ref(inventory_path) if inventory_path and Path(inventory_path).exists() else None
    loss_log = MetricLog(Path(out_dir) / "loss_log.jsonl" if out_dir is not None else None)
    if resume is None and loss_log.path is not None and loss_log.path.exists():
        loss_log.path.unlink()
    trained_ids = sorted(sampler.datasets)

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint.capture(
            model,
            optimizer,
            run_config=config.to_dict(),
            np_rng=rng,
            step=step,
            epoch=epoch,
            inventory_ref=inventory_ref,
            datasets=trained_ids,
        )

    def write(checkpoint: Checkpoint, name: str) -> Optional[Path]:
        if out_dir is None:
            return None
        path = Path(out_dir) / name
        digest = save_checkpoint(checkpoint, path)
        events.append("checkpoint_written", path=str(path), digest=digest, epoch=checkpoint.epoch, step=checkpoint.step)
        return path

    stats: list[EpochStats] = []
    for epoch in range(start_epoch, train_cfg.epochs):
        losses = []
        for _ in range(train_cfg.steps_per_epoch):
            batch_modality, triplets = sampler.sample_batch(rng)
            try:
                losses.append(train_step(model, optimizer, triplets, train_cfg))
            except NumericError as e:
                events.append("step_failed", step=step, epoch=epoch, modality=batch_modality.value, error=str(e), details=e.details)
                raise
            step += 1
        epoch_stats = _epoch_stats(epoch, losses)
        stats.append(epoch_stats)
        loss_log.append(**epoch_stats.to_dict())
        events.append("epoch_completed", **epoch_stats.to_dict())
        logger.info("epoch %d: mean loss %.6f over %d steps", epoch, epoch_stats.mean, epoch_stats.steps)
        if train_cfg.checkpoint_every_epoch:
            write(snapshot(epoch + 1), f"checkpoint_epoch{epoch + 1}.ckpt")

    model.eval()
    final = snapshot(max(train_cfg.epochs, start_epoch))
    path = write(final, "checkpoint.ckpt")
    return FitResult(model, final, stats, sampler.excluded, path)
