import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from artic_synth.checkpoints import load_checkpoint, save_checkpoint
from artic_synth.cvae import CVAEConfig
from artic_synth.decoder import DecoderConfig
from artic_synth.encoder import EncoderConfig
from artic_synth.training import (
    EarlyStopping,
    TrainConfig,
    evaluate_mse,
    feature_seed,
    fit_cvae,
    frame_pool,
    load_cvae,
    load_seq2seq,
    synthesize,
    train_cvae,
    train_s2s,
)

ENC = EncoderConfig(41, n_layers=1, d_model=64, n_heads=2, ff_dim=64, dropout=0.0)
CVAE = CVAEConfig(41, latent_dim=8, encoder_channels=(8, 8, 8, 8), decoder_channels=(8, 8, 8, 8, 8), feature_channels=8)


def dec(variant="s2s"):
    return DecoderConfig(d=1, res_channels=(16, 16, 16), up_channels=(16, 16), cvae_feature_channels=8, variant=variant)


@pytest.fixture(scope="module")
def tiny_cvae(small_corpus):
    model, _ = train_cvae(small_corpus, CVAE, TrainConfig(cvae_epochs=1, cvae_batch_size=32))
    return model


class TestEarlyStopping:
    def test_arithmetic(self):
        es = EarlyStopping(patience=3)
        stopped_at = None
        for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.96, 0.97], start=1):
            es.step(loss)
            if es.should_stop:
                stopped_at = epoch
                break
        assert stopped_at == 5 and es.best_epoch == 2

    def test_ties_are_not_improvements(self):
        es = EarlyStopping(patience=2)
        assert es.step(1.0) and not es.step(1.0) and not es.step(1.0)
        assert es.should_stop and es.best_epoch == 1

    def test_invalid_patience(self):
        with pytest.raises(ValueError):
            EarlyStopping(0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.integers(1, 5))
    def test_best_is_running_minimum(self, losses, patience):
        es = EarlyStopping(patience)
        seen = []
        for loss in losses:
            es.step(loss)
            seen.append(loss)
            if es.should_stop:
                break
        assert seen[es.best_epoch - 1] == min(seen)
        assert all(seen[es.best_epoch - 1] < x for x in seen[: es.best_epoch - 1])


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.betas, c.eps, c.batch_size, c.patience) == (1e-4, (0.9, 0.999), 1e-8, 1, 10)
        assert (c.cvae_epochs, c.cvae_batch_size, c.grad_clip) == (5, 64, 1.0)

    @pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(patience=0), dict(batch_size=4)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_feature_seed_distinct():
    seeds = {feature_seed(0, e, i) for e in range(5) for i in range(5)}
    assert len(seeds) == 25 and feature_seed(1, 2, 3) == feature_seed(1, 2, 3)


class TestTrainS2S:
    def test_one_step_per_utterance(self, small_corpus, monkeypatch):
        calls = []
        orig = torch.optim.Adam.step

        def counting(self, *a, **k):
            calls.append(1)
            return orig(self, *a, **k)

        monkeypatch.setattr(torch.optim.Adam, "step", counting)
        train = small_corpus[:4]
        _, report = train_s2s(train, small_corpus[4:6], ENC, dec(), TrainConfig(max_epochs=2))
        assert report.steps_per_epoch == 4 and len(calls) == 8

    def test_best_state_restored(self, small_corpus, tmp_path):
        model, report = train_s2s(
            small_corpus[:4], small_corpus[4:6], ENC, dec(), TrainConfig(max_epochs=6, patience=2, learning_rate=3e-3),
            checkpoint_path=tmp_path / "m.ckpt", log_path=tmp_path / "log.jsonl",
        )
        b = report.best_epoch
        assert report.val_losses[b - 1] == min(report.val_losses)
        assert evaluate_mse(model, small_corpus[4:6]) == pytest.approx(report.val_losses[b - 1], rel=1e-6)
        lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in lines] == list(range(1, report.epochs + 1))
        assert set(lines[0]) == {"epoch", "train_loss", "val_loss"}
        loaded, meta = load_seq2seq(tmp_path / "m.ckpt")
        assert meta["best_epoch"] == b and meta["encoder_config"]["d_model"] == 64
        ids = small_corpus[5].phoneme_ids
        np.testing.assert_array_equal(loaded.synthesize(ids), model.synthesize(ids))

    def test_deterministic(self, small_corpus):
        runs = [train_s2s(small_corpus[:3], [], ENC, dec(), TrainConfig(max_epochs=1, seed=4))[1] for _ in range(2)]
        assert runs[0].train_losses == runs[1].train_losses

    def test_loss_decreases(self, small_corpus):
        _, report = train_s2s(small_corpus[:2], [], ENC, dec(), TrainConfig(max_epochs=8, learning_rate=1e-3))
        assert report.train_losses[-1] < report.train_losses[0]

    def test_errors(self, small_corpus):
        with pytest.raises(ValueError, match="empty"):
            train_s2s([], [], ENC, dec())
        with pytest.raises(ValueError, match="CVAE"):
            train_s2s(small_corpus[:2], [], ENC, dec("s2s-v"))

    def test_s2s_v(self, small_corpus, tiny_cvae, tmp_path):
        model, report = train_s2s(
            small_corpus[:3], small_corpus[3:4], ENC, dec("s2s-v"), TrainConfig(max_epochs=2),
            prior=tiny_cvae, checkpoint_path=tmp_path / "v.ckpt",
        )
        before = {k: v.clone() for k, v in tiny_cvae.state_dict().items()}
        assert all(torch.equal(before[k], v) for k, v in model.prior.state_dict().items())
        loaded, meta = load_seq2seq(tmp_path / "v.ckpt")
        assert meta["kind"] == "s2s-v" and "cvae_config" in meta
        ids = small_corpus[0].phoneme_ids
        a, b, c = (synthesize(tmp_path / "v.ckpt", ids, seed=s) for s in (1, 1, 2))
        assert np.array_equal(a, b) and not np.array_equal(a, c)
        assert a.shape == (len(ids), 3, 64, 64)

    def test_prior_frozen_during_training(self, small_corpus, tiny_cvae):
        before = {k: v.clone() for k, v in tiny_cvae.state_dict().items()}
        train_s2s(small_corpus[:2], [], ENC, dec("s2s-v"), TrainConfig(max_epochs=1), prior=tiny_cvae)
        assert all(torch.equal(before[k], v) for k, v in tiny_cvae.state_dict().items())


class TestSynthesize:
    def test_s2s_seed_independent(self, small_corpus):
        model, _ = train_s2s(small_corpus[:1], [], ENC, dec(), TrainConfig(max_epochs=1))
        ids = np.full(40, 5)
        a = synthesize(model, ids, seed=0)
        assert a.shape == (40, 3, 64, 64)
        assert np.array_equal(a, synthesize(model, ids, seed=99))
        with pytest.raises(ValueError):
            synthesize(model, [], seed=0)


class TestCVAETraining:
    def test_fixed_epochs_and_reproducible(self, small_corpus, tmp_path):
        cfg = TrainConfig(cvae_epochs=3, cvae_batch_size=16)
        m1, r1 = train_cvae(small_corpus, CVAE, cfg, tmp_path / "c.ckpt", tmp_path / "c.jsonl")
        _, r2 = train_cvae(small_corpus, CVAE, cfg)
        assert r1.epochs == 3 and r1.train_losses == r2.train_losses
        assert r1.train_losses[-1] < r1.train_losses[0]
        frames, _ = frame_pool(small_corpus)
        assert r1.steps_per_epoch == int(np.ceil(len(frames) / 16))
        loaded, meta = load_cvae(tmp_path / "c.ckpt")
        assert meta["cvae_config"]["latent_dim"] == 8
        assert torch.equal(loaded.sample_feature_sequence([3, 4], 0), m1.sample_feature_sequence([3, 4], 0))
        assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 3

    def test_default_epochs(self, small_corpus):
        _, report = fit_cvae(*frame_pool(small_corpus[:1]), CVAE)
        assert report.epochs == 5

    def test_empty_pool(self):
        with pytest.raises(ValueError, match="empty"):
            train_cvae([], CVAE)


class TestCheckpoints:
    def test_round_trip_and_tamper(self, tmp_path):
        states = {"a": {"w": torch.arange(4.0)}}
        save_checkpoint(tmp_path / "x.ckpt", states, {"kind": "test"})
        meta, back = load_checkpoint(tmp_path / "x.ckpt")
        assert meta["kind"] == "test" and torch.equal(back["a"]["w"], states["a"]["w"])
        payload = torch.load(tmp_path / "x.ckpt", weights_only=True)
        payload["states"]["a"]["w"][0] = 7.0
        torch.save(payload, tmp_path / "y.ckpt")
        with pytest.raises(ValueError, match="hash"):
            load_checkpoint(tmp_path / "y.ckpt")

    def test_byte_identical(self, tmp_path):
        states = {"a": {"w": torch.arange(4.0)}}
        save_checkpoint(tmp_path / "1.ckpt", states, {"kind": "t"})
        save_checkpoint(tmp_path / "2.ckpt", states, {"kind": "t"})
        assert (tmp_path / "1.ckpt").read_bytes() == (tmp_path / "2.ckpt").read_bytes()

    def test_wrong_kind(self, tmp_path):
        save_checkpoint(tmp_path / "x.ckpt", {"a": {"w": torch.zeros(1)}}, {"kind": "segnet"})
        with pytest.raises(ValueError):
            load_seq2seq(tmp_path / "x.ckpt")
        with pytest.raises(ValueError):
            load_cvae(tmp_path / "x.ckpt")
