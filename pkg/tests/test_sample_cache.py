"""Tests for the LMDB cache of prepared datasets."""

import json

import numpy as np
import pytest

from conftest import small_spec
from icad.cache_meta import (
    KEY_DELIMITER,
    compute_source_fingerprint,
    make_cache_key,
    parse_cache_key,
)
from icad.common import DataError
from icad.ingest import Modality
from icad.log_miner import LogMiner
from icad.sample_cache import CacheEnv, CacheReader, build_prepared, try_load_prepared
from icad.synthgen import write_task


@pytest.fixture
def manifests(tmp_path):
    data = tmp_path / "data"
    return [
        write_task(small_spec(Modality.TIME_SERIES), data),
        write_task(small_spec(Modality.TABULAR), data),
        write_task(small_spec(Modality.LOG), data),
    ]


def assert_same_datasets(a, b):
    assert [d.dataset_id for d in a] == [d.dataset_id for d in b]
    for x, y in zip(a, b):
        assert x.modality == y.modality
        assert x.vocab_size == y.vocab_size
        for group in ("train_normals", "train_anomalies", "test"):
            xs, ys = getattr(x, group), getattr(y, group)
            assert len(xs) == len(ys)
            for s, t in zip(xs, ys):
                np.testing.assert_array_equal(s.payload, t.payload)
                assert s.label == t.label


class TestCacheKeys:
    """Tests for key construction."""

    def test_make_key(self):
        key = make_cache_key("samples", "synth-ts-0", "test")
        assert key == KEY_DELIMITER.join(["v1", "samples", "synth-ts-0", "test"]).encode()

    def test_parse_key(self):
        key = make_cache_key("a", "b")
        assert parse_cache_key(key) == ["a", "b"]


class TestFingerprint:
    """Tests for compute_source_fingerprint."""

    def test_stable(self, manifests):
        assert compute_source_fingerprint(manifests) == compute_source_fingerprint(manifests)

    def test_order_matters(self, manifests):
        """Template ids depend on parse order, so order is part of the fingerprint."""
        assert compute_source_fingerprint(manifests) != compute_source_fingerprint(manifests[::-1])

    def test_miner_settings_matter(self, manifests):
        a = compute_source_fingerprint(manifests, {"depth": 4})
        b = compute_source_fingerprint(manifests, {"depth": 5})
        assert a != b

    def test_data_file_edit(self, manifests, tmp_path):
        before = compute_source_fingerprint(manifests)
        data_file = next((tmp_path / "data" / "synth-tab-0").glob("*.csv"))
        data_file.write_text(data_file.read_text() + "\n", encoding="utf-8")
        assert compute_source_fingerprint(manifests) != before

    def test_test_file_edit(self, tmp_path):
        """A predefined test series is part of the fingerprint."""
        (tmp_path / "train.csv").write_text("1,2\n3,4\n", encoding="utf-8")
        (tmp_path / "test.csv").write_text("5,6\n7,8\n", encoding="utf-8")
        manifest = tmp_path / "m.json"
        manifest.write_text(
            json.dumps(
                {
                    "dataset_id": "ts",
                    "modality": "time_series",
                    "data_path": "train.csv",
                    "test_data_path": "test.csv",
                    "prep": {"p": 1},
                }
            ),
            encoding="utf-8",
        )
        before = compute_source_fingerprint([manifest])
        (tmp_path / "test.csv").write_text("5,6\n7,9\n", encoding="utf-8")
        assert compute_source_fingerprint([manifest]) != before


class TestBuildPrepared:
    """Tests for build_prepared and try_load_prepared."""

    def test_rebuild_then_reuse(self, manifests, tmp_path):
        out = tmp_path / "out"
        first, rebuilt = build_prepared(out, manifests, LogMiner())
        assert rebuilt is True
        second, rebuilt = build_prepared(out, manifests, LogMiner())
        assert rebuilt is False
        assert_same_datasets(first, second)

    def test_cache_matches_direct_ingest(self, manifests, tmp_path):
        from icad.ingest import load_dataset

        out = tmp_path / "out"
        build_prepared(out, manifests, LogMiner())
        cached = try_load_prepared(out, manifests, LogMiner())
        miner = LogMiner()
        direct = [load_dataset(m, miner) for m in manifests]
        assert_same_datasets(cached, direct)

    def test_stale_after_edit(self, manifests, tmp_path):
        out = tmp_path / "out"
        build_prepared(out, manifests, LogMiner())
        data_file = next((tmp_path / "data" / "synth-tab-0").glob("*.csv"))
        data_file.write_text(data_file.read_text() + "\n", encoding="utf-8")
        assert try_load_prepared(out, manifests, LogMiner()) is None
        _, rebuilt = build_prepared(out, manifests, LogMiner())
        assert rebuilt is True

    def test_stale_with_other_miner(self, manifests, tmp_path):
        out = tmp_path / "out"
        build_prepared(out, manifests, LogMiner())
        assert try_load_prepared(out, manifests, LogMiner(depth=5)) is None

    def test_missing_cache(self, manifests, tmp_path):
        assert try_load_prepared(tmp_path / "nowhere", manifests, LogMiner()) is None

    def test_bad_manifest_writes_nothing(self, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(DataError):
            build_prepared(out, [tmp_path / "absent.json"], LogMiner())
        assert not CacheEnv(out).exists

    def test_reader_lists_datasets(self, manifests, tmp_path):
        out = tmp_path / "out"
        build_prepared(out, manifests, LogMiner())
        with CacheEnv(out) as env:
            reader = CacheReader(env)
            assert sorted(reader.dataset_ids()) == ["synth-log-0", "synth-tab-0", "synth-ts-0"]
            assert reader.get_dataset("synth-unknown") is None
            meta = env.load_meta()
        assert meta.datasets == ["synth-ts-0", "synth-tab-0", "synth-log-0"]
