"""Tests for the contrastive trainer: loss, triplets, scheduling and fit."""

import numpy as np
import pytest
import torch

from conftest import small_spec, tiny_model_config, tiny_run_config
from icad.common import ConfigError, ContractError, DataError, TripletError
from icad.config import TrainConfig
from icad.events import EventLog, read_jsonl
from icad.ingest import Modality
from icad.model import ICADModel, resolve_model_config
from icad.scorer import cosine
from icad.synthgen import gen_task
from icad.trainer import (
    NegativeKind,
    ReferenceSet,
    SamplingScheduler,
    Triplet,
    TripletSampler,
    ccl_loss,
    fit,
    make_optimizer,
    perturb_sample,
    train_step,
    triplet_violations,
    validate_triplet,
)


def train_config(**overrides) -> TrainConfig:
    values = dict(K=3, batch_sizes={"time_series": 2, "tabular": 4, "log": 2}, time_size_floor=0)
    values.update(overrides)
    return TrainConfig(**values).validate()


class TestLoss:
    """Tests for the margin loss."""

    def test_zero_when_positive_much_closer(self):
        h_ref = torch.tensor([[1.0, 0.0]])
        h_pos = torch.tensor([[1.0, 0.1]])
        h_neg = torch.tensor([[-1.0, 0.0]])
        assert float(ccl_loss(h_ref, h_pos, h_neg, 0.5)) == 0.0

    def test_margin_when_equal(self):
        """Equal similarities leave exactly the margin."""
        h = torch.tensor([[1.0, 2.0]])
        assert float(ccl_loss(h, h, h, 0.3)) == pytest.approx(0.3)

    def test_penalizes_closer_negative(self):
        h_ref = torch.tensor([[1.0, 0.0]])
        h_pos = torch.tensor([[0.0, 1.0]])
        h_neg = torch.tensor([[1.0, 0.0]])
        assert float(ccl_loss(h_ref, h_pos, h_neg, 0.5)) == pytest.approx(1.5)

    def test_printed_form_swaps_sign(self):
        h_ref = torch.tensor([[1.0, 0.0]])
        h_pos = torch.tensor([[0.0, 1.0]])
        h_neg = torch.tensor([[1.0, 0.0]])
        assert float(ccl_loss(h_ref, h_pos, h_neg, 0.5, form="printed")) == 0.0

    def test_batch_shape(self):
        h = torch.randn(5, 4)
        assert ccl_loss(h, torch.randn(5, 4), torch.randn(5, 4), 0.5).shape == (5,)

    def test_non_positive_margin_rejected(self):
        h = torch.ones(1, 2)
        with pytest.raises(ConfigError):
            ccl_loss(h, h, h, 0.0)

    def test_unknown_form_rejected(self):
        h = torch.ones(1, 2)
        with pytest.raises(ConfigError):
            ccl_loss(h, h, h, 0.5, form="other")

    @pytest.mark.parametrize("form, pos_target, neg_target", [("corrected", 1.0, -1.0), ("printed", -1.0, 1.0)])
    def test_argmin_direction(self, form, pos_target, neg_target):
        """With h_R frozen in 2-D, minimizing drives the similarities to their extremes."""
        h_ref = torch.tensor([[1.0, 0.0]])
        h_pos = torch.tensor([[-0.8, 0.6]], requires_grad=True)
        h_neg = torch.tensor([[0.9, -0.4]], requires_grad=True)
        optimizer = torch.optim.Adam([h_pos, h_neg], lr=0.02)
        for _ in range(1500):
            optimizer.zero_grad()
            # alpha > 2 keeps the hinge active everywhere
            ccl_loss(h_ref, h_pos, h_neg, 2.5, form).sum().backward()
            optimizer.step()
        with torch.no_grad():
            assert float(cosine(h_ref, h_pos)) == pytest.approx(pos_target, abs=0.01)
            assert float(cosine(h_ref, h_neg)) == pytest.approx(neg_target, abs=0.01)


class TestTripletValidity:
    """Tests for triplet invariants."""

    def test_valid_simple(self, tab_datasets):
        a, b = tab_datasets
        triplet = Triplet(
            ReferenceSet(a.train_normals[:3], a.dataset_id),
            a.train_normals[3],
            b.train_normals[0],
            NegativeKind.SIMPLE,
        )
        assert triplet_violations(triplet) == []

    def test_positive_in_references(self, tab_datasets):
        a, b = tab_datasets
        triplet = Triplet(
            ReferenceSet(a.train_normals[:3], a.dataset_id),
            a.train_normals[1],
            b.train_normals[0],
            NegativeKind.SIMPLE,
        )
        with pytest.raises(TripletError):
            validate_triplet(triplet)

    def test_simple_negative_from_same_dataset(self, tab_datasets):
        a, _ = tab_datasets
        triplet = Triplet(
            ReferenceSet(a.train_normals[:3], a.dataset_id),
            a.train_normals[3],
            a.train_normals[4],
            NegativeKind.SIMPLE,
        )
        assert "simple negative comes from the source dataset" in triplet_violations(triplet)

    def test_hard_negative_must_be_anomalous(self, tab_datasets):
        a, _ = tab_datasets
        triplet = Triplet(
            ReferenceSet(a.train_normals[:3], a.dataset_id),
            a.train_normals[3],
            a.train_normals[4],
            NegativeKind.HARD,
        )
        assert "hard negative is not anomalous" in triplet_violations(triplet)

    def test_reference_set_rejects_anomalies(self, tab_datasets):
        a, _ = tab_datasets
        with pytest.raises(ContractError):
            ReferenceSet([a.train_anomalies[0]], a.dataset_id)


class TestPerturbation:
    """Tests for synthetic hard negatives."""

    def test_time_spike(self, ts_datasets):
        sample = ts_datasets[0].train_normals[0]
        std = np.ones(sample.payload.shape[1])
        out = perturb_sample(sample, np.random.default_rng(0), channel_std=std)
        diff = np.abs(out.payload - sample.payload)
        assert out.label == 1
        assert np.count_nonzero(diff.max(axis=1)) == 1
        assert diff.max() == pytest.approx(6.0)

    def test_tabular_swap(self, tab_datasets):
        ds = tab_datasets[0]
        base, donor = ds.train_normals[0], ds.train_normals[1]
        out = perturb_sample(base, np.random.default_rng(0), donor=donor)
        changed = out.payload != base.payload
        assert np.array_equal(out.payload[changed], donor.payload[changed])
        assert out.split == "synthetic"

    def test_log_replacement_count(self, log_datasets):
        ds = log_datasets[0]
        base = ds.train_normals[0]
        out = perturb_sample(base, np.random.default_rng(0), vocab_size=ds.vocab_size)
        assert out.payload.shape == base.payload.shape
        assert out.payload.max() < ds.vocab_size

    def test_synthetic_tabular_negative_differs_from_every_normal(self):
        """The donor row is never the row being perturbed."""
        ds = gen_task(small_spec(Modality.TABULAR, n_rows=12, train_anomalies=False))
        sampler = TripletSampler([ds], train_config(K=1))
        rng = np.random.default_rng(0)
        for _ in range(300):
            negative = sampler.sample(rng).negative
            assert negative.label == 1
            assert not any(np.array_equal(negative.payload, s.payload) for s in ds.train_normals)

    def test_tabular_needs_donor(self, tab_datasets):
        with pytest.raises(DataError):
            perturb_sample(tab_datasets[0].train_normals[0], np.random.default_rng(0))


class TestSamplingScheduler:
    """Tests for modality and dataset scheduling."""

    def test_universal_uniform_over_modalities(self):
        sched = SamplingScheduler(
            {"a": (Modality.TABULAR, 100), "b": (Modality.LOG, 10), "c": (Modality.LOG, 30)}
        )
        assert sched.modality_probabilities() == {Modality.TABULAR: 0.5, Modality.LOG: 0.5}
        probs = sched.probabilities()
        assert probs["a"] == pytest.approx(0.5)
        assert probs["b"] == pytest.approx(0.125)
        assert probs["c"] == pytest.approx(0.375)

    def test_time_series_floor(self):
        """Small time-series datasets count as the floor size."""
        sched = SamplingScheduler(
            {"a": (Modality.TIME_SERIES, 100), "b": (Modality.TIME_SERIES, 5000)},
            time_size_floor=2500,
        )
        probs = sched.dataset_probabilities(Modality.TIME_SERIES)
        assert probs["a"] == pytest.approx(2500 / 7500)

    def test_task_specific_restricts_modality(self):
        sched = SamplingScheduler(
            {"a": (Modality.TABULAR, 10), "b": (Modality.LOG, 10)},
            mode="task_specific",
            modality=Modality.LOG,
        )
        assert sched.modalities == [Modality.LOG]

    def test_task_specific_needs_modality(self):
        with pytest.raises(ConfigError):
            SamplingScheduler({"a": (Modality.LOG, 1)}, mode="task_specific")

    def test_no_eligible_dataset(self):
        with pytest.raises(DataError):
            SamplingScheduler({"a": (Modality.LOG, 1)}, mode="task_specific", modality=Modality.TABULAR)

    def test_empirical_frequencies(self):
        """Over 50k draws, dataset and modality frequencies match within 0.01."""
        sched = SamplingScheduler(
            {
                "a": (Modality.TABULAR, 300),
                "b": (Modality.TABULAR, 100),
                "c": (Modality.LOG, 50),
                "d": (Modality.TIME_SERIES, 4000),
                "e": (Modality.TIME_SERIES, 1000),
            },
            time_size_floor=2500,
        )
        rng = np.random.default_rng(0)
        counts = dict.fromkeys("abcde", 0)
        modalities = dict.fromkeys(Modality, 0)
        n = 50000
        for _ in range(n):
            modality = sched.draw_modality(rng)
            modalities[modality] += 1
            counts[sched.draw_dataset(modality, rng)] += 1
        probs = sched.probabilities()
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-9)
        for name, p in probs.items():
            assert counts[name] / n == pytest.approx(p, abs=0.01), name
        for modality, count in modalities.items():
            assert count / n == pytest.approx(1 / 3, abs=0.01), modality


class TestTripletSampler:
    """Tests for TripletSampler."""

    def test_triplets_valid(self, all_datasets):
        sampler = TripletSampler(all_datasets, train_config())
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert triplet_violations(sampler.sample(rng)) == []

    def test_simple_hard_ratio(self, tab_datasets):
        """Negatives follow the 8:2 simple-to-hard ratio."""
        sampler = TripletSampler(tab_datasets, train_config())
        rng = np.random.default_rng(1)
        kinds = [sampler.sample(rng).negative_kind for _ in range(10000)]
        simple = sum(k is NegativeKind.SIMPLE for k in kinds) / len(kinds)
        assert simple == pytest.approx(0.8, abs=0.02)

    def test_single_dataset_modality_uses_hard(self, tab_datasets):
        sampler = TripletSampler(tab_datasets[:1], train_config())
        rng = np.random.default_rng(0)
        assert sampler.single_dataset_modalities == ["tabular"]
        assert all(sampler.sample(rng).negative_kind is NegativeKind.HARD for _ in range(50))

    def test_synthetic_negative_without_anomalies(self):
        ds = gen_task(small_spec(Modality.TABULAR, train_anomalies=False))
        assert not ds.train_anomalies
        sampler = TripletSampler([ds], train_config())
        triplet = sampler.sample(np.random.default_rng(0))
        assert triplet.synthetic
        assert triplet_violations(triplet) == []

    def test_small_dataset_excluded(self, tab_datasets, tmp_path):
        """Datasets with fewer than K + 1 normals are dropped and logged."""
        small = gen_task(small_spec(Modality.TABULAR, task_id=2, n_rows=6))
        assert len(small.train_normals) < 4
        events = EventLog(tmp_path / "events.jsonl")
        sampler = TripletSampler(tab_datasets + [small], train_config(), events=events)
        assert sampler.excluded == [small.dataset_id]
        assert small.dataset_id not in sampler.datasets
        records = [e for e in events.read() if e["event"] == "dataset_excluded"]
        assert records[0]["dataset_id"] == small.dataset_id

    def test_all_excluded(self, tab_datasets):
        with pytest.raises(DataError):
            TripletSampler(tab_datasets, train_config(K=500))

    def test_batch_shares_modality(self, all_datasets):
        sampler = TripletSampler(all_datasets, train_config())
        modality, batch = sampler.sample_batch(np.random.default_rng(0))
        assert len(batch) == sampler.config.batch_sizes[modality.value]
        assert {t.positive.modality for t in batch} == {modality}


class TestTrainStep:
    """Tests for a single optimizer step."""

    def test_updates_parameters(self, tab_datasets):
        torch.manual_seed(0)
        cfg = train_config()
        model = ICADModel(resolve_model_config(tiny_model_config(), tab_datasets))
        optimizer = make_optimizer(model, cfg)
        before = [p.detach().clone() for p in model.parameters()]
        sampler = TripletSampler(tab_datasets, cfg)
        _, batch = sampler.sample_batch(np.random.default_rng(0))
        loss = train_step(model, optimizer, batch, cfg)
        assert loss >= 0.0
        assert any(not torch.equal(b, p) for b, p in zip(before, model.parameters()))

    def test_zero_learning_rate_keeps_parameters(self, all_datasets):
        torch.manual_seed(0)
        cfg = train_config(learning_rate=0.0)
        model = ICADModel(resolve_model_config(tiny_model_config(), all_datasets))
        optimizer = make_optimizer(model, cfg)
        before = [p.detach().clone() for p in model.parameters()]
        sampler = TripletSampler(all_datasets, cfg)
        rng = np.random.default_rng(0)
        for _ in range(3):
            _, batch = sampler.sample_batch(rng)
            train_step(model, optimizer, batch, cfg)
        assert all(torch.equal(b, p) for b, p in zip(before, model.parameters()))

    def test_step_decreases_repeated_triplet_loss(self, tab_datasets):
        """One small step on a single repeated triplet lowers its loss."""
        torch.manual_seed(0)
        cfg = train_config(alpha=1.5, learning_rate=1e-4)
        model = ICADModel(resolve_model_config(tiny_model_config(), tab_datasets))
        triplet = TripletSampler(tab_datasets, cfg).sample(np.random.default_rng(3))
        batch = [triplet] * 4

        def batch_loss():
            with torch.no_grad():
                reps = model.train_representations(
                    [t.refs.samples for t in batch], [t.positive for t in batch], [t.negative for t in batch]
                )
                return float(ccl_loss(reps.h_ref, reps.h_target, reps.h_negative, cfg.alpha).mean())

        before = batch_loss()
        assert before > 0.0
        assert train_step(model, make_optimizer(model, cfg), batch, cfg) == pytest.approx(before, abs=1e-6)
        assert batch_loss() < before

    def test_mixed_modalities_rejected(self, all_datasets):
        cfg = train_config()
        model = ICADModel(resolve_model_config(tiny_model_config(), all_datasets))
        sampler = TripletSampler(all_datasets, cfg)
        rng = np.random.default_rng(0)
        batch = [sampler.sample(rng, Modality.TABULAR), sampler.sample(rng, Modality.LOG)]
        with pytest.raises(ContractError):
            train_step(model, make_optimizer(model, cfg), batch, cfg)

    def test_empty_batch_rejected(self, tab_datasets):
        cfg = train_config()
        model = ICADModel(resolve_model_config(tiny_model_config(), tab_datasets))
        with pytest.raises(ContractError):
            train_step(model, make_optimizer(model, cfg), [], cfg)


class TestFit:
    """Tests for the training loop."""

    def test_deterministic(self, all_datasets):
        """Two runs with one seed produce identical parameters."""
        config = tiny_run_config()
        a = fit(all_datasets, config)
        b = fit(all_datasets, config)
        for (name, pa), (_, pb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
            assert torch.equal(pa, pb), name

    def test_writes_artifacts(self, tab_datasets, tmp_path):
        config = tiny_run_config()
        events = EventLog(tmp_path / "events.jsonl")
        result = fit(tab_datasets, config, out_dir=tmp_path, events=events)
        assert result.checkpoint_path == tmp_path / "checkpoint.ckpt"
        assert result.checkpoint_path.exists()
        losses = read_jsonl(tmp_path / "loss_log.jsonl")
        assert [r["epoch"] for r in losses] == [0]
        assert {"loss_mean", "loss_std", "loss_min", "loss_max"} <= set(losses[0])
        kinds = [e["event"] for e in events.read()]
        assert "epoch_completed" in kinds and "checkpoint_written" in kinds

    def test_holdout_skipped(self, tab_datasets):
        config = tiny_run_config(holdout=[tab_datasets[1].dataset_id])
        result = fit(tab_datasets, config)
        assert result.checkpoint.datasets == [tab_datasets[0].dataset_id]

    def test_task_specific_mode(self, all_datasets):
        config = tiny_run_config(mode="task_specific", modality="log")
        result = fit(all_datasets, config)
        assert set(result.checkpoint.datasets) == {"synth-log-0", "synth-log-1"}

    def test_zero_epochs(self, tab_datasets):
        config = tiny_run_config()
        config.train.epochs = 0
        result = fit(tab_datasets, config)
        assert result.epochs == []

    def test_nothing_to_train(self, tab_datasets):
        config = tiny_run_config(holdout=[d.dataset_id for d in tab_datasets])
        with pytest.raises(DataError):
            fit(tab_datasets, config)

    def test_resume_matches_uninterrupted(self, tab_datasets, tmp_path):
        """Training 2 epochs equals 1 epoch, checkpoint, then 1 more."""
        full = tiny_run_config()
        full.train.epochs = 2
        straight = fit(tab_datasets, full)

        half = tiny_run_config()
        half.train.epochs = 1
        first = fit(tab_datasets, half, out_dir=tmp_path)
        resumed = fit(tab_datasets, full, resume=first.checkpoint)

        for (name, pa), (_, pb) in zip(
            straight.model.state_dict().items(), resumed.model.state_dict().items()
        ):
            assert torch.allclose(pa, pb, atol=1e-6), name
