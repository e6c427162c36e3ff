"""Subject-specific training loops, early stopping and checkpoint files."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoints import load_checkpoint, save_checkpoint
from .corpus import Utterance
from .cvae import ConditionalVAE, CVAEConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .seq2seq import Seq2SeqModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 1
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    grad_clip: float | None = 1.0
    cvae_epochs: int = 5
    cvae_batch_size: int = 64
    cvae_learning_rate: float = 1e-3

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.learning_rate <= 0 or self.cvae_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size != 1:
            raise ValueError("sequence models train one full utterance per step (batch_size=1)")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(out["betas"])
        return out


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    steps_per_epoch: int = 0
    checkpoint_path: str | None = None
    seconds: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.train_losses)


class EarlyStopping:
    """Tracks validation losses; stops after ``patience`` epochs without a
    strict improvement on the best value seen so far."""

    def __init__(self, patience: int = 10):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = float("inf")
        self.best_epoch: int | None = None
        self.epoch = 0
        self.bad_epochs = 0

    def step(self, loss: float) -> bool:
        """Record one epoch's loss. Returns True if this epoch is the new best."""
        self.epoch += 1
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, self.epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def feature_seed(seed: int, epoch: int, index: int) -> int:
    """Per (epoch, utterance) noise seed for s2s-v training."""
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1, np.uint64)[0])


def corpus_hash(utterances: Sequence[Utterance]) -> str:
    h = hashlib.sha256()
    for u in utterances:
        h.update(u.utt_id.encode())
        h.update(np.ascontiguousarray(u.phoneme_ids).tobytes())
        h.update(np.ascontiguousarray(u.video, dtype=np.float32).tobytes())
    return h.hexdigest()


# checkpoints -------------------------------------------------------------------


def save_cvae(path, model: ConditionalVAE, subject: str = "", extra: dict | None = None) -> Path:
    meta = {"kind": "cvae", "subject": subject, "cvae_config": model.config.to_dict(), **(extra or {})}
    return save_checkpoint(path, {"cvae": model.state_dict()}, meta)


def load_cvae(path) -> tuple[ConditionalVAE, dict]:
    meta, states = load_checkpoint(path)
    if meta["kind"] != "cvae":
        raise ValueError(f"{path} is a {meta['kind']} checkpoint, not cvae")
    model = ConditionalVAE(CVAEConfig(**meta["cvae_config"]))
    model.load_state_dict(states["cvae"])
    model.eval()
    return model, meta


def save_seq2seq(path, model: Seq2SeqModel, subject: str = "", extra: dict | None = None) -> Path:
    meta = {
        "kind": model.variant,
        "subject": subject,
        "encoder_config": model.encoder.config.to_dict(),
        "decoder_config": model.decoder.config.to_dict(),
        **(extra or {}),
    }
    states = {
        "encoder": model.encoder.state_dict(),
        "decoder": model.decoder.state_dict(),
    }
    if model.prior is not None:
        meta["cvae_config"] = model.prior.config.to_dict()
        states["cvae"] = model.prior.state_dict()
    return save_checkpoint(path, states, meta)


def load_seq2seq(path) -> tuple[Seq2SeqModel, dict]:
    meta, states = load_checkpoint(path)
    if meta["kind"] not in ("s2s", "s2s-v"):
        raise ValueError(f"{path} is a {meta['kind']} checkpoint, not a sequence model")
    prior = None
    if meta["kind"] == "s2s-v":
        prior = ConditionalVAE(CVAEConfig(**meta["cvae_config"]))
        prior.load_state_dict(states["cvae"])
    model = Seq2SeqModel(
        EncoderConfig(**meta["encoder_config"]),
        DecoderConfig(**meta["decoder_config"]),
        prior,
    )
    model.encoder.load_state_dict(states["encoder"])
    model.decoder.load_state_dict(states["decoder"])
    model.eval()
    return model, meta


# loops ---------------------------------------------------------------------------


def _write_log(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def _ids(u: Utterance) -> torch.Tensor:
    return torch.as_tensor(u.phoneme_ids, dtype=torch.long)


def _target(u: Utterance) -> torch.Tensor:
    return torch.as_tensor(u.video, dtype=torch.float32)


@torch.no_grad()
def evaluate_mse(model: Seq2SeqModel, utterances: Sequence[Utterance], seed: int = 0) -> float:
    """Mean per-utterance MSE in evaluation mode; s2s-v noise fixed per utterance."""
    was_training = model.training
    model.eval()
    losses = [
        F.mse_loss(model(_ids(u), seed=feature_seed(seed, 0, i)), _target(u)).item()
        for i, u in enumerate(utterances)
    ]
    model.train(was_training)
    return float(np.mean(losses))


def train_s2s(
    train: Sequence[Utterance],
    val: Sequence[Utterance],
    encoder_config: EncoderConfig,
    decoder_config: DecoderConfig,
    config: TrainConfig | None = None,
    prior: ConditionalVAE | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    subject: str = "",
) -> tuple[Seq2SeqModel, TrainReport]:
    """Train s2s or s2s-v on full utterances, one optimizer step per utterance.

    Validation MSE drives early stopping and the returned model carries the
    best-epoch parameters. With an empty validation set the training loss is
    used instead.
    """
    config = config or TrainConfig()
    if not train:
        raise ValueError("empty training split")
    if decoder_config.variant == "s2s-v" and prior is None:
        raise ValueError("s2s-v training requires a trained CVAE")
    seed_everything(config.seed)
    model = Seq2SeqModel(encoder_config, decoder_config, prior)
    opt = torch.optim.Adam(
        model.trainable_parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps
    )
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(config.patience)
    report = TrainReport(steps_per_epoch=len(train))
    best_state = copy.deepcopy(model.state_dict())
    t_start = time.perf_counter()
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            model.train()
            losses, steps = [], 0
            for idx in rng.permutation(len(train)):
                u = train[idx]
                ids = _ids(u)
                feats = model.prior_features(u.phoneme_ids, feature_seed(config.seed, epoch, int(idx)))
                pred = model(ids, feats)
                loss = F.mse_loss(pred, _target(u))
                opt.zero_grad()
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), config.grad_clip)
                opt.step()
                losses.append(loss.item())
                steps += 1
            assert steps == len(train)
            train_loss = float(np.mean(losses))
            val_loss = evaluate_mse(model, val, config.seed) if val else train_loss
            report.train_losses.append(train_loss)
            report.val_losses.append(val_loss)
            if stopper.step(val_loss):
                best_state = copy.deepcopy(model.state_dict())
            seconds = time.perf_counter() - t0
            # wall-clock time stays out of the file so reruns are byte-identical
            _write_log(log_fh, {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
            log.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, train_loss, val_loss, seconds)
            if stopper.should_stop:
                log.info("early stop at epoch %d, best epoch %d", epoch, stopper.best_epoch)
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    model.load_state_dict(best_state)
    model.eval()
    report.best_epoch = stopper.best_epoch
    report.seconds = time.perf_counter() - t_start
    if checkpoint_path is not None:
        save_seq2seq(
            checkpoint_path,
            model,
            subject,
            {
                "train_config": config.to_dict(),
                "corpus_hash": corpus_hash(train),
                "best_epoch": report.best_epoch,
            },
        )
        report.checkpoint_path = str(checkpoint_path)
    return model, report


def frame_pool(utterances: Sequence[Utterance]) -> tuple[np.ndarray, np.ndarray]:
    """Stack every frame and its phoneme id: ((N, 3, 64, 64), (N,))."""
    if not utterances:
        return np.zeros((0, 3, 64, 64), np.float32), np.zeros(0, np.int64)
    frames = np.concatenate([u.video for u in utterances]).astype(np.float32)
    ids = np.concatenate([u.phoneme_ids for u in utterances])
    return frames, ids


def fit_cvae(
    frames: np.ndarray,
    phoneme_ids: np.ndarray,
    cvae_config: CVAEConfig,
    config: TrainConfig | None = None,
    log_path: str | Path | None = None,
) -> tuple[ConditionalVAE, TrainReport]:
    """Fixed-epoch CVAE training on frame-level shuffled minibatches."""
    config = config or TrainConfig()
    if len(frames) == 0:
        raise ValueError("empty frame pool")
    if len(frames) != len(phoneme_ids):
        raise ValueError(f"{len(phoneme_ids)} labels for {len(frames)} frames")
    seed_everything(config.seed)
    model = ConditionalVAE(cvae_config)
    opt = torch.optim.Adam(
        model.parameters(), lr=config.cvae_learning_rate, betas=config.betas, eps=config.eps
    )
    rng = np.random.default_rng(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    frames_t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))
    ids_t = torch.as_tensor(np.asarray(phoneme_ids), dtype=torch.long)
    bs = config.cvae_batch_size
    report = TrainReport(steps_per_epoch=int(np.ceil(len(frames) / bs)))
    t_start = time.perf_counter()
    log_fh = open(log_path, "w") if log_path else None
    try:
        model.train()
        for epoch in range(1, config.cvae_epochs + 1):
            t0 = time.perf_counter()
            order = torch.from_numpy(rng.permutation(len(frames)))
            total = 0.0
            for start in range(0, len(frames), bs):
                idx = order[start : start + bs]
                noise = torch.randn(len(idx), cvae_config.latent_dim, generator=gen)
                loss, _, _ = model.loss(frames_t[idx], ids_t[idx], noise)
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            epoch_loss = total / len(frames)
            report.train_losses.append(epoch_loss)
            seconds = time.perf_counter() - t0
            _write_log(log_fh, {"epoch": epoch, "train_loss": epoch_loss, "val_loss": None})
            log.info("cvae epoch %d loss %.6f (%.1fs)", epoch, epoch_loss, seconds)
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    report.best_epoch = config.cvae_epochs
    report.seconds = time.perf_counter() - t_start
    return model, report


def train_cvae(
    utterances: Sequence[Utterance],
    cvae_config: CVAEConfig,
    config: TrainConfig | None = None,
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    subject: str = "",
) -> tuple[ConditionalVAE, TrainReport]:
    """Train the CVAE on every frame of ``utterances`` (the pooled train and
    validation sets), shuffled independently of utterance boundaries."""
    config = config or TrainConfig()
    frames, ids = frame_pool(utterances)
    model, report = fit_cvae(frames, ids, cvae_config, config, log_path)
    if checkpoint_path is not None:
        save_cvae(
            checkpoint_path,
            model,
            subject,
            {"train_config": config.to_dict(), "corpus_hash": corpus_hash(utterances)},
        )
        report.checkpoint_path = str(checkpoint_path)
    return model, report


def synthesize(checkpoint, phoneme_ids, seed: int = 0) -> np.ndarray:
    """Synthesize an (n, 3, 64, 64) video from a checkpoint path or a model."""
    model = load_seq2seq(checkpoint)[0] if isinstance(checkpoint, (str, Path)) else checkpoint
    ids = np.asarray(phoneme_ids)
    if ids.size == 0:
        raise ValueError("cannot synthesize an empty phoneme sequence")
    return model.synthesize(ids, seed=seed)
