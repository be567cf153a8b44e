"""Pytest configuration - ensure src is in path, shared small fixtures."""

import sys
from pathlib import Path

import pytest

# Add src directory to path for imports
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from icad.config import ModelConfig, RunConfig, TrainConfig  # noqa: E402
from icad.ingest import Modality  # noqa: E402
from icad.log_miner import LogMiner  # noqa: E402
from icad.synthgen import SynthSpec, gen_task  # noqa: E402

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def small_spec(modality: Modality, task_id: int = 0, seed: int = 0, **overrides) -> SynthSpec:
    """A synthetic task small enough for unit tests."""
    sizes = {
        Modality.TIME_SERIES: {"length": 480, "p": 8},
        Modality.TABULAR: {"n_rows": 160, "F_prime": 8},
        Modality.LOG: {"n_lines": 600, "w": 10},
    }[Modality(modality)]
    sizes.update(overrides)
    return SynthSpec(modality=modality, task_id=task_id, seed=seed, **sizes)


def tiny_model_config(**overrides) -> ModelConfig:
    values = dict(
        d_model=16,
        n_layers=1,
        n_heads=2,
        mlp_ratio=2,
        prompt_len=2,
        max_seq_len=512,
        log_layers=1,
        log_heads=2,
    )
    values.update(overrides)
    return ModelConfig(**values).validate()


def tiny_run_config(**overrides) -> RunConfig:
    train = TrainConfig(
        K=3,
        epochs=1,
        steps_per_epoch=2,
        batch_sizes={"time_series": 2, "tabular": 4, "log": 2},
        time_size_floor=0,
    ).validate()
    values = dict(seed=0, train=train, model=tiny_model_config())
    values.update(overrides)
    return RunConfig(**values).validate()


@pytest.fixture
def model_config():
    return tiny_model_config()


@pytest.fixture
def run_config():
    return tiny_run_config()


@pytest.fixture(scope="session")
def ts_datasets():
    return [gen_task(small_spec(Modality.TIME_SERIES, t)) for t in range(2)]


@pytest.fixture(scope="session")
def tab_datasets():
    return [gen_task(small_spec(Modality.TABULAR, t)) for t in range(2)]


@pytest.fixture(scope="session")
def log_datasets():
    miner = LogMiner()
    return [gen_task(small_spec(Modality.LOG, t), miner) for t in range(2)]


@pytest.fixture(scope="session")
def all_datasets(ts_datasets, tab_datasets, log_datasets):
    return ts_datasets + tab_datasets + log_datasets
