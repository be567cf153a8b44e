"""Run configuration: model, training and miner settings.

A run configuration is a JSON document validated before any work starts.
Unknown keys at any level are rejected with a ConfigError naming the key
path. Shape-like model settings (p, d_raw, F_prime, w, vocab_size) may be
left unset; they are then derived from the prepared datasets.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .common import ConfigError
from .ingest import MODALITIES, Modality
from .log_miner import DEFAULT_DEPTH, DEFAULT_SIMILARITY_THRESHOLD


MODES = ("universal", "task_specific")
LOSS_FORMS = ("corrected", "printed")

DEFAULT_BATCH_SIZES = {"time_series": 64, "tabular": 256, "log": 32}


def _check_keys(data: Any, allowed: set, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    return data


def _int(value: Any, key: str, minimum: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(key, f"expected an integer >= {minimum}, got {value!r}")
    return value


def _positive_float(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(key, f"expected a number > 0, got {value!r}")
    return float(value)


@dataclass
class ModelConfig:
    """Encoder and backbone hyperparameters."""

    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    mlp_ratio: int = 4
    prompt_len: int = 8
    max_seq_len: int = 1024
    static_length: bool = True
    time_conv_layers: int = 1
    time_kernel: int = 3
    norm_eps: float = 1e-5
    log_layers: int = 2
    log_heads: int = 4
    p: Optional[int] = None
    d_raw: Optional[int] = None
    F_prime: Optional[int] = None
    w: Optional[int] = None
    vocab_size: Optional[int] = None

    def validate(self) -> "ModelConfig":
        _int(self.d_model, "model.d_model", 1)
        _int(self.n_layers, "model.n_layers", 0)
        _int(self.n_heads, "model.n_heads", 1)
        _int(self.mlp_ratio, "model.mlp_ratio", 1)
        _int(self.prompt_len, "model.prompt_len", 1)
        _int(self.max_seq_len, "model.max_seq_len", 2)
        _int(self.time_conv_layers, "model.time_conv_layers", 1)
        _int(self.time_kernel, "model.time_kernel", 1)
        _int(self.log_layers, "model.log_layers", 0)
        _int(self.log_heads, "model.log_heads", 1)
        _positive_float(self.norm_eps, "model.norm_eps")
        if not isinstance(self.static_length, bool):
            raise ConfigError("model.static_length", "expected a boolean")
        if self.time_kernel % 2 == 0:
            raise ConfigError("model.time_kernel", "kernel size must be odd for same padding")
        for name in ("n_heads", "log_heads"):
            if self.d_model % getattr(self, name):
                raise ConfigError(f"model.{name}", f"must divide d_model={self.d_model}")
        for name in ("p", "d_raw", "F_prime", "w"):
            value = getattr(self, name)
            if value is not None:
                _int(value, f"model.{name}", 1)
        if self.vocab_size is not None:
            _int(self.vocab_size, "model.vocab_size", 0)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, path: str = "model") -> "ModelConfig":
        _check_keys(data, {f.name for f in fields(cls)}, path)
        return cls(**data).validate()


@dataclass
class TrainConfig:
    """Contrastive training settings.

    Attributes:
        K: Reference set size.
        alpha: Margin of the contrastive loss.
        simple_hard_ratio: Relative weights of simple and hard negatives.
        steps_per_epoch: Optimizer steps per epoch (toy scale).
        batch_sizes: Triplets per step, per modality.
        time_size_floor: Minimum effective size of a time-series dataset
            when computing sampling probabilities.
        loss_form: "corrected" pulls the positive toward the reference set;
            "printed" keeps the literal sign for ablations.
    """

    K: int = 5
    alpha: float = 0.5
    simple_hard_ratio: tuple = (8.0, 2.0)
    epochs: int = 5
    steps_per_epoch: int = 100
    learning_rate: float = 1e-3
    batch_sizes: dict = field(default_factory=lambda: dict(DEFAULT_BATCH_SIZES))
    time_size_floor: int = 2500
    loss_form: str = "corrected"
    grad_clip: float = 1.0
    betas: tuple = (0.9, 0.999)
    checkpoint_every_epoch: bool = False

    def validate(self) -> "TrainConfig":
        _int(self.K, "train.K", 1)
        _positive_float(self.alpha, "train.alpha")
        ratio = tuple(self.simple_hard_ratio)
        if len(ratio) != 2:
            raise ConfigError("train.simple_hard_ratio", "expected two weights")
        for w in ratio:
            _positive_float(w, "train.simple_hard_ratio")
        self.simple_hard_ratio = tuple(float(w) for w in ratio)
        _int(self.epochs, "train.epochs", 0)
        _int(self.steps_per_epoch, "train.steps_per_epoch", 0)
        if isinstance(self.learning_rate, bool) or not isinstance(
            self.learning_rate, (int, float)
        ) or self.learning_rate < 0:
            raise ConfigError("train.learning_rate", f"expected a number >= 0, got {self.learning_rate!r}")
        self.learning_rate = float(self.learning_rate)
        _check_keys(self.batch_sizes, {m.value for m in MODALITIES}, "train.batch_sizes")
        sizes = dict(DEFAULT_BATCH_SIZES)
        sizes.update(self.batch_sizes)
        for name, size in sizes.items():
            _int(size, f"train.batch_sizes.{name}", 1)
        self.batch_sizes = sizes
        _int(self.time_size_floor, "train.time_size_floor", 0)
        if self.loss_form not in LOSS_FORMS:
            raise ConfigError("train.loss_form", f"expected one of {LOSS_FORMS}")
        _positive_float(self.grad_clip, "train.grad_clip")
        betas = tuple(self.betas)
        if len(betas) != 2 or not all(0.0 <= b < 1.0 for b in betas):
            raise ConfigError("train.betas", "expected two values in [0, 1)")
        self.betas = tuple(float(b) for b in betas)
        return self

    def to_dict(self) -> dict:
        data = asdict(self)
        data["simple_hard_ratio"] = list(self.simple_hard_ratio)
        data["betas"] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: dict, path: str = "train") -> "TrainConfig":
        _check_keys(data, {f.name for f in fields(cls)}, path)
        return cls(**data).validate()


@dataclass
class MinerConfig:
    """Template-miner settings."""

    depth: int = DEFAULT_DEPTH
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    extra_patterns: list = field(default_factory=list)

    def validate(self) -> "MinerConfig":
        _int(self.depth, "miner.depth", 2)
        if not isinstance(self.similarity_threshold, (int, float)) or not (
            0.0 < self.similarity_threshold < 1.0
        ):
            raise ConfigError("miner.similarity_threshold", "expected a value in (0, 1)")
        if not all(isinstance(p, str) for p in self.extra_patterns):
            raise ConfigError("miner.extra_patterns", "expected a list of regex strings")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, path: str = "miner") -> "MinerConfig":
        _check_keys(data, {f.name for f in fields(cls)}, path)
        return cls(**data).validate()


@dataclass
class RunConfig:
    """Complete configuration of a training or evaluation run."""

    seed: int = 0
    mode: str = "universal"
    modality: Optional[str] = None
    output_dir: str = "runs/default"
    manifests: list = field(default_factory=list)
    holdout: list = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    miner: MinerConfig = field(default_factory=MinerConfig)

    def validate(self) -> "RunConfig":
        _int(self.seed, "seed", 0)
        if self.mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}, got {self.mode!r}")
        if self.mode == "task_specific":
            if self.modality is None:
                raise ConfigError("modality", "required when mode is task_specific")
        if self.modality is not None:
            try:
                Modality(self.modality)
            except ValueError:
                raise ConfigError("modality", f"unknown modality {self.modality!r}")
        if not isinstance(self.output_dir, str) or not self.output_dir:
            raise ConfigError("output_dir", "expected a non-empty path")
        if not all(isinstance(m, str) for m in self.manifests):
            raise ConfigError("manifests", "expected a list of paths")
        if not all(isinstance(h, str) for h in self.holdout):
            raise ConfigError("holdout", "expected a list of dataset ids")
        self.train.validate()
        self.model.validate()
        self.miner.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "modality": self.modality,
            "output_dir": self.output_dir,
            "manifests": list(self.manifests),
            "holdout": list(self.holdout),
            "train": self.train.to_dict(),
            "model": self.model.to_dict(),
            "miner": self.miner.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        """Build and validate a config, rejecting unknown keys."""
        _check_keys(data, {f.name for f in fields(cls)}, "")
        data = dict(data)
        train = TrainConfig.from_dict(data.pop("train", {}))
        model = ModelConfig.from_dict(data.pop("model", {}))
        miner = MinerConfig.from_dict(data.pop("miner", {}))
        return cls(train=train, model=model, miner=miner, **data).validate()


def load_config(path: Path) -> RunConfig:
    """Read a run configuration file.

    Raises:
        ConfigError: If the file is missing, not JSON or fails validation.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(str(path), "config file does not exist")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON: {e}")
    config = RunConfig.from_dict(data)
    # Manifest paths in a config file are relative to the file
    config.manifests = [
        str(m if Path(m).is_absolute() else (path.resolve().parent / m)) for m in config.manifests
    ]
    return config
