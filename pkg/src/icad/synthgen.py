"""Deterministic synthetic anomaly-detection tasks.

Every generator is a pure function of its SynthSpec. Distinct task ids get
distinct generating parameters, so normals of one task serve as simple
negatives for another task of the same modality.

- time series: sum of sinusoids (harmonics of the patch length) plus
  Gaussian noise; anomalies are spikes of 6 sigma or short level shifts.
- tabular: two Gaussian clusters per task; anomalies are uniform over an
  inflated bounding box, or rows pulled toward the other cluster's mean.
- logs: a sparse Markov chain over ten templates drawn from a shared pool;
  anomalous windows hold a short run of out-of-inventory templates or
  transition-violating templates.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .common import ConfigError, ContractError
from .ingest import (
    DatasetHandle,
    Modality,
    RawLog,
    RawTable,
    RawTimeSeries,
    Sample,
    prepare_log,
    prepare_table,
    prepare_time_series,
)
from .log_miner import LogMiner
from .metrics import auroc
from .scorer import draw_reference_set

ANOMALY_KINDS = {
    Modality.TIME_SERIES: ("mixed", "spike", "level_shift"),
    Modality.TABULAR: ("box", "swap"),
    Modality.LOG: ("mixed", "out_of_inventory", "bigram"),
}

_MODALITY_CODE = {Modality.TIME_SERIES: 1, Modality.TABULAR: 2, Modality.LOG: 3}
_SHORT = {Modality.TIME_SERIES: "ts", Modality.TABULAR: "tab", Modality.LOG: "log"}

SPIKE_SIGMAS = 6.0
LEVEL_SHIFT_SIGMAS = 4.0
NOISE_STD = 0.1

POOL_SIZE = 40
TASK_TEMPLATES = 10
DOMINANT_TRANSITION = 0.8

_VERBS = (
    "open", "close", "read", "write", "commit", "flush", "sync", "send",
    "recv", "alloc", "free", "lock", "unlock", "retry", "start", "stop",
)
_NOUNS = ("block", "socket", "session", "file", "page", "queue", "buffer", "worker", "lease", "table")
_LINKS = ("from", "to", "on", "at", "via", "for")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic task; the seed fully determines the output."""

    modality: Modality
    task_id: int = 0
    seed: int = 0
    anomaly_rate: float = 0.05
    anomaly_kind: Optional[str] = None
    train_anomalies: bool = True
    train_frac: float = 0.5
    length: int = 4000
    d_raw: int = 2
    p: int = 16
    n_rows: int = 1000
    F_prime: int = 16
    n_lines: int = 4000
    w: int = 20

    def __post_init__(self):
        modality = Modality(self.modality)
        object.__setattr__(self, "modality", modality)
        if not 0.0 < self.anomaly_rate < 0.5:
            raise ConfigError("anomaly_rate", f"must be in (0, 0.5), got {self.anomaly_rate}")
        kind = self.anomaly_kind or ANOMALY_KINDS[modality][0]
        if kind not in ANOMALY_KINDS[modality]:
            raise ConfigError("anomaly_kind", f"{kind!r} is not a {modality.value} anomaly kind")
        object.__setattr__(self, "anomaly_kind", kind)
        if self.task_id < 0:
            raise ConfigError("task_id", "must be >= 0")

    @property
    def dataset_id(self) -> str:
        return f"synth-{_SHORT[self.modality]}-{self.task_id}"

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.task_id, _MODALITY_CODE[self.modality], stream])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["modality"] = self.modality.value
        return data


def _quantize(values: np.ndarray) -> np.ndarray:
    """Round to the six-decimal text form used on disk, so files reload exactly."""
    return np.char.mod("%.6f", values).astype(np.float64)


def _region_counts(total: int, cut: int, rate: float, train_anomalies: bool) -> tuple[int, int]:
    """Anomaly budgets for the train region [0, cut) and the test region."""
    test = max(1, round(rate * (total - cut)))
    train = round(rate * cut) if train_anomalies else 0
    return train, test


_PLACEMENT_MISSES = 10_000


def _free_runs(occupied: np.ndarray, lo: int, hi: int) -> list[tuple[int, int]]:
    """Maximal unoccupied runs ``[start, end)`` inside [lo, hi)."""
    free = np.concatenate(([False], ~occupied[lo:hi], [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(free))
    return [(lo + int(s), lo + int(e)) for s, e in zip(edges[::2], edges[1::2])]


def _place_intervals(
    rng: np.random.Generator,
    lo: int,
    hi: int,
    budget: int,
    draw_length,
    occupied: np.ndarray,
) -> list[tuple[int, int]]:
    """Place non-touching intervals in [lo, hi) until ``budget`` points are covered.

    The last interval is truncated so the budget is met exactly. After
    ``_PLACEMENT_MISSES`` rejected draws, intervals go straight into free runs
    (touching allowed, length capped at the longest run).

    Raises:
        ContractError: If [lo, hi) has fewer free points than ``budget``.
    """
    free = int((~occupied[lo:hi]).sum())
    if budget > free:
        raise ContractError(f"anomaly budget {budget} exceeds {free} free points in [{lo}, {hi})")
    intervals = []
    misses = 0
    while budget > 0:
        length = min(int(draw_length()), budget, hi - lo)
        if misses < _PLACEMENT_MISSES:
            start = int(rng.integers(lo, hi - length + 1))
            left, right = max(lo, start - 1), min(hi, start + length + 1)
            if occupied[left:right].any():
                misses += 1
                continue
        else:
            runs = _free_runs(occupied, lo, hi)
            length = min(length, max(e - s for s, e in runs))
            fits = [(s, e) for s, e in runs if e - s >= length]
            s, e = fits[int(rng.integers(len(fits)))]
            start = int(rng.integers(s, e - length + 1))
        occupied[start : start + length] = True
        intervals.append((start, start + length))
        budget -= length
    return intervals


# =============================================================================
# Time series
# =============================================================================


def task_harmonics(spec: SynthSpec) -> np.ndarray:
    """Harmonic indices per channel (frequency = m / p), distinct per task id."""
    rng = spec.rng(1)
    top = max(2, spec.p // 2)
    base = 1 + spec.task_id % top
    harmonics = np.empty((spec.d_raw, 2), dtype=np.int64)
    for c in range(spec.d_raw):
        others = [m for m in range(1, top + 1) if m != base]
        harmonics[c] = (base, int(rng.choice(others)) if others else base)
    return harmonics


def generate_time_series(spec: SynthSpec) -> RawTimeSeries:
    if spec.modality is not Modality.TIME_SERIES:
        raise ConfigError("modality", "generate_time_series needs a time_series spec")
    rng = spec.rng(0)
    params = spec.rng(2)
    harmonics = task_harmonics(spec)
    t = np.arange(spec.length, dtype=np.float64)
    values = np.zeros((spec.length, spec.d_raw))
    for c in range(spec.d_raw):
        for m in harmonics[c]:
            amplitude = params.uniform(0.5, 1.5)
            phase = params.uniform(0.0, 2 * np.pi)
            values[:, c] += amplitude * np.sin(2 * np.pi * m * t / spec.p + phase)
    sigma = values.std(axis=0)
    values += rng.normal(0.0, NOISE_STD, size=values.shape)

    labels = np.zeros(spec.length, dtype=np.int64)
    cut = int(spec.length * spec.train_frac)
    occupied = np.zeros(spec.length, dtype=bool)
    train_budget, test_budget = _region_counts(spec.length, cut, spec.anomaly_rate, spec.train_anomalies)

    def draw_length():
        kind = spec.anomaly_kind
        if kind == "mixed":
            kind = "spike" if rng.random() < 0.5 else "level_shift"
        return rng.integers(1, 4) if kind == "spike" else rng.integers(spec.p // 2, spec.p + 1)

    for lo, hi, budget in ((0, cut, train_budget), (cut, spec.length, test_budget)):
        if budget == 0:
            continue
        for start, end in _place_intervals(rng, lo, hi, budget, draw_length, occupied):
            sign = 1.0 if rng.random() < 0.5 else -1.0
            scale = SPIKE_SIGMAS if end - start <= 3 else LEVEL_SHIFT_SIGMAS
            values[start:end] += sign * scale * sigma
            labels[start:end] = 1
    return RawTimeSeries(_quantize(values), labels)


def gen_time_task(spec: SynthSpec) -> DatasetHandle:
    return prepare_time_series(generate_time_series(spec), spec.dataset_id, spec.p, spec.p, spec.train_frac)


# =============================================================================
# Tabular
# =============================================================================


def task_feature_count(spec: SynthSpec) -> int:
    return 8 + (3 * spec.task_id) % 7


def task_cluster_means(spec: SynthSpec) -> np.ndarray:
    """(2, F) cluster means; tasks are offset from each other by 4 per feature."""
    rng = spec.rng(1)
    f = task_feature_count(spec)
    return rng.normal(0.0, 3.0, size=(2, f)) + 4.0 * (spec.task_id + 1)


def generate_table(spec: SynthSpec) -> RawTable:
    if spec.modality is not Modality.TABULAR:
        raise ConfigError("modality", "generate_table needs a tabular spec")
    rng = spec.rng(0)
    means = task_cluster_means(spec)
    n, f = spec.n_rows, means.shape[1]
    cluster = rng.integers(0, 2, size=n)
    rows = means[cluster] + rng.normal(0.0, 1.0, size=(n, f))
    lo, hi = rows.min(axis=0), rows.max(axis=0)
    span = hi - lo

    labels = np.zeros(n, dtype=np.int64)
    cut = int(n * spec.train_frac)
    train_budget, test_budget = _region_counts(n, cut, spec.anomaly_rate, spec.train_anomalies)
    picks = []
    if train_budget:
        picks.extend(rng.choice(cut, size=train_budget, replace=False).tolist())
    picks.extend((cut + rng.choice(n - cut, size=test_budget, replace=False)).tolist())

    for i in sorted(picks):
        if spec.anomaly_kind == "box":
            rows[i] = rng.uniform(lo - 0.5 * span, hi + 0.5 * span)
        else:
            other = means[1 - cluster[i]]
            swap = rng.choice(f, size=max(1, f // 2), replace=False)
            rows[i, swap] = other[swap] + rng.normal(0.0, 1.0, size=swap.shape[0])
        labels[i] = 1
    return RawTable(list(_quantize(rows)), labels)


def gen_tab_task(spec: SynthSpec) -> DatasetHandle:
    return prepare_table(generate_table(spec), spec.dataset_id, spec.F_prime, spec.train_frac)


# =============================================================================
# Logs
# =============================================================================


def template_pool(seed: int) -> list[list[str]]:
    """Shared pool of message shapes; slot tokens are '{num}', '{hex}' or '{ip}'."""
    rng = np.random.default_rng([seed, POOL_SIZE])
    pool = []
    for j in range(POOL_SIZE):
        tokens = [f"op{j:02d}", str(rng.choice(_VERBS)), str(rng.choice(_NOUNS))]
        for _ in range(int(rng.integers(1, 4))):
            tokens.append(str(rng.choice(_LINKS)))
            tokens.append(str(rng.choice(["{num}", "{hex}", "{ip}"])))
        pool.append(tokens)
    return pool


def render_message(tokens: Sequence[str], rng: np.random.Generator) -> str:
    out = []
    for token in tokens:
        if token == "{num}":
            out.append(str(int(rng.integers(0, 100000))))
        elif token == "{hex}":
            out.append(f"0x{int(rng.integers(0, 2**32)):08x}")
        elif token == "{ip}":
            out.append(".".join(str(int(v)) for v in rng.integers(0, 256, size=4)))
        else:
            out.append(token)
    return " ".join(out)


@dataclass
class LogTask:
    """Raw synthetic log with the chain that generated it."""

    lines: list[str]
    labels: np.ndarray
    pool_indices: np.ndarray
    inventory: list[int]
    transitions: dict = field(default_factory=dict)

    def is_valid_bigram(self, a: int, b: int) -> bool:
        return b in self.transitions.get(a, ())


def task_chain(spec: SynthSpec) -> tuple[list[int], dict[int, dict[int, float]]]:
    """Task inventory (pool indices) and its sparse transition table."""
    rng = spec.rng(1)
    inventory = sorted(int(i) for i in rng.choice(POOL_SIZE, size=TASK_TEMPLATES, replace=False))
    transitions: dict[int, dict[int, float]] = {}
    for pos, state in enumerate(inventory):
        dominant = inventory[(pos + 1) % TASK_TEMPLATES]
        candidates = [s for s in inventory if s not in (state, dominant)]
        rare = int(rng.choice(candidates))
        transitions[state] = {dominant: DOMINANT_TRANSITION, rare: 1.0 - DOMINANT_TRANSITION}
    return inventory, transitions


def generate_log(spec: SynthSpec) -> LogTask:
    if spec.modality is not Modality.LOG:
        raise ConfigError("modality", "generate_log needs a log spec")
    rng = spec.rng(0)
    pool = template_pool(spec.seed)
    inventory, transitions = task_chain(spec)
    outside = [i for i in range(POOL_SIZE) if i not in inventory]

    n = spec.n_lines
    states = np.empty(n, dtype=np.int64)
    states[0] = inventory[int(rng.integers(TASK_TEMPLATES))]
    for i in range(1, n):
        succ = transitions[int(states[i - 1])]
        keys = sorted(succ)
        states[i] = keys[int(rng.choice(len(keys), p=[succ[k] for k in keys]))]

    labels = np.zeros(n, dtype=np.int64)
    n_windows = n // spec.w
    cut = int(n_windows * spec.train_frac)
    train_budget, test_budget = _region_counts(n_windows, cut, spec.anomaly_rate, spec.train_anomalies)
    chosen = []
    if train_budget:
        chosen.extend(rng.choice(cut, size=train_budget, replace=False).tolist())
    chosen.extend((cut + rng.choice(n_windows - cut, size=test_budget, replace=False)).tolist())

    run = max(1, math.ceil(0.2 * spec.w))
    for window in sorted(chosen):
        start = window * spec.w + int(rng.integers(0, spec.w - run + 1))
        kind = spec.anomaly_kind
        if kind == "mixed":
            kind = "out_of_inventory" if rng.random() < 0.5 else "bigram"
        for i in range(start, start + run):
            if kind == "out_of_inventory":
                states[i] = outside[int(rng.integers(len(outside)))]
            else:
                prev = int(states[i - 1]) if i > 0 else -1
                invalid = [s for s in inventory if s not in transitions.get(prev, {}) and s != prev]
                states[i] = invalid[int(rng.integers(len(invalid)))]
            labels[i] = 1

    lines = [render_message(pool[int(s)], rng) for s in states]
    return LogTask(lines, labels, states, inventory, {k: set(v) for k, v in transitions.items()})


def gen_log_task(spec: SynthSpec, miner: Optional[LogMiner] = None) -> DatasetHandle:
    task = generate_log(spec)
    return prepare_log(RawLog(task.lines, task.labels), spec.dataset_id, spec.w, spec.train_frac, miner)


# =============================================================================
# Suites and files
# =============================================================================


def gen_task(spec: SynthSpec, miner: Optional[LogMiner] = None) -> DatasetHandle:
    if spec.modality is Modality.TIME_SERIES:
        return gen_time_task(spec)
    if spec.modality is Modality.TABULAR:
        return gen_tab_task(spec)
    return gen_log_task(spec, miner)


def suite_specs(seed: int = 0, tasks_per_modality: int = 3, **overrides) -> list[SynthSpec]:
    """Specs for ``tasks_per_modality`` tasks of every modality."""
    return [
        SynthSpec(modality=m, task_id=t, seed=seed, **overrides)
        for m in (Modality.TIME_SERIES, Modality.TABULAR, Modality.LOG)
        for t in range(tasks_per_modality)
    ]


def gen_suite(specs: Sequence[SynthSpec], miner: Optional[LogMiner] = None) -> list[DatasetHandle]:
    """Generate tasks; log tasks share one template miner."""
    miner = miner if miner is not None else LogMiner()
    return [gen_task(spec, miner) for spec in specs]


def write_task(spec: SynthSpec, out_dir: Path) -> Path:
    """Write a task as manifest + data + labels under ``out_dir/<dataset_id>/``.

    Returns:
        Path of the manifest.
    """
    task_dir = Path(out_dir) / spec.dataset_id
    task_dir.mkdir(parents=True, exist_ok=True)

    if spec.modality is Modality.TIME_SERIES:
        raw = generate_time_series(spec)
        data_name, labels = "series.csv", raw.point_labels
        np.savetxt(task_dir / data_name, raw.values, fmt="%.6f", delimiter=",")
        prep = {"p": spec.p, "stride": spec.p}
    elif spec.modality is Modality.TABULAR:
        raw = generate_table(spec)
        data_name, labels = "rows.csv", raw.row_labels
        np.savetxt(task_dir / data_name, np.vstack(raw.rows), fmt="%.6f", delimiter=",")
        prep = {"F_prime": spec.F_prime}
    else:
        task = generate_log(spec)
        data_name, labels = "messages.log", task.labels
        with open(task_dir / data_name, "w", encoding="utf-8") as f:
            f.write("\n".join(task.lines) + "\n")
        prep = {"w": spec.w}

    with open(task_dir / "labels.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(str(int(v)) for v in labels) + "\n")

    manifest = {
        "dataset_id": spec.dataset_id,
        "modality": spec.modality.value,
        "data_path": data_name,
        "label_path": "labels.txt",
        "split": {"train_frac": spec.train_frac},
        "prep": prep,
    }
    manifest_path = task_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


# =============================================================================
# Raw-space baseline
# =============================================================================


def _log_features(samples: Sequence[Sample], vocab: int) -> np.ndarray:
    """Bag of ids plus bag of bigrams per window."""
    out = np.zeros((len(samples), vocab + vocab * vocab))
    for row, s in enumerate(samples):
        ids = s.payload
        np.add.at(out[row], ids, 1.0)
        np.add.at(out[row], vocab + ids[:-1] * vocab + ids[1:], 1.0)
    return out


def baseline_scores(refs: Sequence[Sample], samples: Sequence[Sample]) -> np.ndarray:
    """Mean Euclidean distance of each sample to the references, in raw space."""
    if refs[0].modality is Modality.LOG:
        vocab = int(max(s.payload.max() for s in list(refs) + list(samples))) + 1
        r = _log_features(refs, vocab)
        x = _log_features(samples, vocab)
    else:
        r = np.stack([s.payload.reshape(-1) for s in refs])
        x = np.stack([s.payload.reshape(-1) for s in samples])
    distances = np.sqrt(((x[:, None, :] - r[None, :, :]) ** 2).sum(axis=-1))
    return distances.mean(axis=1)


def baseline_auroc(dataset: DatasetHandle, K: int = 5, seed: int = 0) -> float:
    """AUROC of the nearest-reference baseline on the test split."""
    refs = draw_reference_set(dataset, K, seed)
    return auroc(baseline_scores(refs, dataset.test), dataset.test_labels)

