"""Tests for schema validation of all written documents."""

import json
from pathlib import Path

import jsonschema
import pytest

from conftest import FIXTURES_DIR, small_spec, tiny_run_config
from icad.cache_meta import compute_source_fingerprint, create_cache_meta
from icad.common import CheckpointError, ConfigError, DataError, NumericError, UndefinedMetricError
from icad.errors import from_exception
from icad.events import EVENT_TYPES, EventLog
from icad.ingest import Modality
from icad.log_miner import LogMiner, save_inventory
from icad.metrics import EvalReport, class_summary, score_histogram
from icad.scorer import DiscrepancyScore
from icad.synthgen import write_task


SCHEMAS_DIR = Path(__file__).parent.parent / "schemas"


def load_schema(name: str) -> dict:
    """Load a schema by name."""
    path = SCHEMAS_DIR / f"{name}.schema.json"
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def as_json(obj) -> dict:
    """Round trip through JSON so tuples become arrays."""
    return json.loads(json.dumps(obj))


class TestManifestSchema:
    """Tests for manifest.schema.json."""

    @pytest.mark.parametrize("modality", [Modality.TIME_SERIES, Modality.TABULAR, Modality.LOG])
    def test_written_manifests(self, modality, tmp_path):
        path = write_task(small_spec(modality), tmp_path)
        jsonschema.validate(json.loads(path.read_text()), load_schema("manifest"))

    def test_prep_required_per_modality(self):
        record = {"dataset_id": "d", "modality": "tabular", "data_path": "rows.csv", "prep": {"w": 4}}
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(record, load_schema("manifest"))

    def test_unknown_key_rejected(self):
        record = {
            "dataset_id": "d",
            "modality": "log",
            "data_path": "messages.log",
            "prep": {"w": 4},
            "comment": "x",
        }
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(record, load_schema("manifest"))

    def test_predefined_test_series(self):
        record = {
            "dataset_id": "d",
            "modality": "time_series",
            "data_path": "train.csv",
            "test_data_path": "test.csv",
            "test_label_path": "test_labels.txt",
            "prep": {"p": 100, "stride": 100},
        }
        jsonschema.validate(record, load_schema("manifest"))
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate({**record, "modality": "log", "prep": {"w": 4}}, load_schema("manifest"))


class TestRunConfigSchema:
    """Tests for run-config.schema.json."""

    def test_default_config(self):
        from icad.config import RunConfig

        jsonschema.validate(as_json(RunConfig().validate().to_dict()), load_schema("run-config"))

    def test_tiny_config(self):
        jsonschema.validate(as_json(tiny_run_config().to_dict()), load_schema("run-config"))

    def test_example_configs(self):
        """Shipped example configs validate."""
        configs = sorted((Path(__file__).parent.parent / "configs").glob("*.json"))
        for path in configs:
            jsonschema.validate(json.loads(path.read_text()), load_schema("run-config"))


class TestEventRecordSchema:
    """Tests for event-record.schema.json."""

    @pytest.mark.parametrize("event", sorted(EVENT_TYPES))
    def test_each_event(self, event, tmp_path):
        log = EventLog(tmp_path / "events.jsonl")
        record = log.append(event, command="train", epoch=0, step=3)
        jsonschema.validate(record, load_schema("event-record"))


class TestErrorSchema:
    """Tests for error.schema.json."""

    @pytest.mark.parametrize(
        "exc",
        [
            ConfigError("train.K", "must be >= 1"),
            DataError("bad", Path("x.csv")),
            CheckpointError(Path("a.ckpt"), "absent"),
            NumericError("zero norm"),
            UndefinedMetricError("single class"),
            FileNotFoundError(2, "No such file", "x.json"),
            RuntimeError("boom"),
        ],
    )
    def test_envelopes(self, exc):
        jsonschema.validate(as_json(from_exception(exc).to_dict()), load_schema("error"))


class TestEvalReportSchema:
    """Tests for eval-report.schema.json."""

    def test_report_with_histogram(self):
        scores = [0.1, 0.2, 0.8, 0.9]
        labels = [0, 0, 1, 1]
        report = EvalReport(
            dataset_id="synth-tab-0",
            metric="auroc",
            value=1.0,
            n_samples=4,
            K=5,
            seed=0,
            summary=class_summary(scores, labels),
            histogram=score_histogram(scores, labels, bins=4),
        )
        jsonschema.validate(as_json(report.to_dict()), load_schema("eval-report"))


class TestScoreRecordSchema:
    """Tests for score-record.schema.json."""

    def test_record(self):
        score = DiscrepancyScore(0.25, sample_key=("synth-tab-0", "test", 4))
        jsonschema.validate(score.to_record(), load_schema("score-record"))
        jsonschema.validate(score.to_record(threshold=0.2), load_schema("score-record"))


class TestTemplateInventorySchema:
    """Tests for template-inventory.schema.json."""

    def test_saved_inventory(self, tmp_path):
        miner = LogMiner()
        lines = (FIXTURES_DIR / "logs" / "blocks.log").read_text().splitlines()
        miner.parse_corpus(lines)
        save_inventory(miner, tmp_path / "templates.json")
        data = json.loads((tmp_path / "templates.json").read_text())
        jsonschema.validate(data, load_schema("template-inventory"))


class TestCacheMetaSchema:
    """Tests for cache-meta.schema.json."""

    def test_meta(self, tmp_path):
        manifest = write_task(small_spec(Modality.TABULAR), tmp_path)
        meta = create_cache_meta(["synth-tab-0"], compute_source_fingerprint([manifest]))
        jsonschema.validate(meta.to_dict(), load_schema("cache-meta"))
