"""Objective evaluation: SegNet training (pooled, then per-subject fine-tune),
mask prediction and dice aggregation over frames and utterances."""

from __future__ import annotations

import copy
import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .checkpoints import load_checkpoint, save_checkpoint
from .corpus import ATBMaskSet, Utterance, check_video
from .segnet import SegNet, SegNetConfig, logits_to_masks, segmentation_loss

MASK_NAMES = ("mask1", "mask2", "mask3")


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|a & b| / (|a| + |b|) for binary masks; 1.0 when both are empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def dice_per_frame(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dice for each frame of two (n, h, w) mask stacks."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool).reshape(a.shape[0], -1)
    b = b.astype(bool).reshape(b.shape[0], -1)
    inter = np.logical_and(a, b).sum(axis=1)
    total = a.sum(axis=1) + b.sum(axis=1)
    out = np.ones(a.shape[0])
    nz = total > 0
    out[nz] = 2.0 * inter[nz] / total[nz]
    return out


def mask_set_dice(a: ATBMaskSet, b: ATBMaskSet) -> np.ndarray:
    """(n, 3) per-frame dice for each of the three masks."""
    return np.stack([dice_per_frame(x, y) for x, y in zip(a, b)], axis=1)


def aggregate_dice(per_frame: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Average each utterance's (n_i, 3) per-frame dice over frames, then take
    mean and population std over utterances. Returns (mean, std, per_utt)."""
    if not per_frame:
        raise ValueError("no utterances to aggregate")
    per_utt = np.stack([np.asarray(d, dtype=float).mean(axis=0) for d in per_frame])
    return per_utt.mean(axis=0), per_utt.std(axis=0), per_utt


# segmentation training -----------------------------------------------------------


@dataclass
class SegTrainConfig:
    epochs: int = 10
    finetune_epochs: int = 5
    learning_rate: float = 3e-3
    finetune_learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _frames_and_masks(utterances: Sequence[Utterance]) -> tuple[np.ndarray, np.ndarray]:
    missing = [u.utt_id for u in utterances if u.gt_masks is None]
    if missing:
        raise ValueError(f"utterances without masks: {missing[:5]}")
    frames = np.concatenate([u.video for u in utterances]).astype(np.float32)
    masks = np.concatenate([u.gt_masks.stack() for u in utterances])
    return frames, masks


def fit_segnet(
    model: SegNet,
    frames: np.ndarray,
    masks: np.ndarray,
    epochs: int,
    learning_rate: float,
    batch_size: int = 32,
    seed: int = 0,
) -> list[float]:
    """Minibatch cross-entropy training in place. Returns per-epoch mean loss."""
    if len(frames) == 0:
        raise ValueError("no frame/mask pairs to train on")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    x_all = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32))
    y_all = torch.from_numpy(np.ascontiguousarray(masks, dtype=np.uint8))
    history = []
    model.train()
    for _ in range(epochs):
        order = torch.from_numpy(rng.permutation(len(frames)))
        total = 0.0
        for start in range(0, len(frames), batch_size):
            idx = order[start : start + batch_size]
            loss = segmentation_loss(model(x_all[idx]), y_all[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(frames))
    model.eval()
    return history


def train_segnet(
    pooled: Sequence[Utterance],
    per_subject: Mapping[str, Sequence[Utterance]],
    config: SegTrainConfig | None = None,
    seg_config: SegNetConfig | None = None,
) -> tuple[SegNet, dict[str, SegNet]]:
    """Train a pooled SegNet, then fine-tune a copy on each subject's frames.

    Returns (pooled_model, {subject: fine_tuned_model}).
    """
    config = config or SegTrainConfig()
    for subject, utts in per_subject.items():
        if not utts or sum(u.n_frames for u in utts if u.gt_masks is not None) == 0:
            raise ValueError(f"subject {subject!r} has no frame/mask pairs")
    frames, masks = _frames_and_masks(pooled)
    torch.manual_seed(config.seed)
    base = SegNet(seg_config)
    fit_segnet(base, frames, masks, config.epochs, config.learning_rate, config.batch_size, config.seed)
    subject_models = {}
    for subject, utts in sorted(per_subject.items()):
        model = copy.deepcopy(base)
        f, m = _frames_and_masks(utts)
        fit_segnet(
            model, f, m, config.finetune_epochs, config.finetune_learning_rate, config.batch_size, config.seed
        )
        subject_models[subject] = model
    return base, subject_models


@torch.no_grad()
def predict_masks(model: SegNet, video: np.ndarray, batch_size: int = 64) -> ATBMaskSet:
    check_video(video)
    was_training = model.training
    model.eval()
    x = torch.from_numpy(np.ascontiguousarray(video, dtype=np.float32))
    out = torch.cat([logits_to_masks(model(x[i : i + batch_size])) for i in range(0, len(x), batch_size)])
    model.train(was_training)
    return ATBMaskSet.from_stack(out.numpy())


# reports ------------------------------------------------------------------------------


@dataclass
class DiceRow:
    subject: str
    variant: str
    mask: str
    mean: float
    std: float
    n_utterances: int


@dataclass
class DiceReport:
    rows: list[DiceRow] = field(default_factory=list)
    per_utterance: dict[str, np.ndarray] = field(default_factory=dict)

    CSV_FIELDS = ("subject", "variant", "mask", "mean", "std", "n_utterances")

    def get(self, mask: str, variant: str | None = None, subject: str | None = None) -> DiceRow:
        for row in self.rows:
            if row.mask == mask and variant in (None, row.variant) and subject in (None, row.subject):
                return row
        raise KeyError((subject, variant, mask))

    @property
    def means(self) -> np.ndarray:
        return np.array([r.mean for r in self.rows])

    def extend(self, other: "DiceReport") -> "DiceReport":
        self.rows.extend(other.rows)
        self.per_utterance.update(other.per_utterance)
        return self

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_FIELDS)
            for r in self.rows:
                w.writerow([r.subject, r.variant, r.mask, f"{r.mean:.6f}", f"{r.std:.6f}", r.n_utterances])

    @classmethod
    def from_csv(cls, path: str | Path) -> "DiceReport":
        with open(path, newline="") as fh:
            rows = [
                DiceRow(r["subject"], r["variant"], r["mask"], float(r["mean"]), float(r["std"]), int(r["n_utterances"]))
                for r in csv.DictReader(fh)
            ]
        return cls(rows)


def report_from_scores(
    per_frame: Mapping[str, np.ndarray], subject: str, variant: str
) -> DiceReport:
    """Build a report from {utt_id: (n_frames, 3) per-frame dice}."""
    mean, std, per_utt = aggregate_dice(list(per_frame.values()))
    rows = [
        DiceRow(subject, variant, name, float(mean[k]), float(std[k]), len(per_frame))
        for k, name in enumerate(MASK_NAMES)
    ]
    return DiceReport(rows, {f"{subject}/{variant}/{u}": s for u, s in zip(per_frame, per_utt)})


def evaluate_model(
    segnet: SegNet,
    synthesize: Callable[[np.ndarray], np.ndarray],
    test_utterances: Sequence[Utterance],
    subject: str = "",
    variant: str = "s2s",
    reference: str = "predicted",
) -> DiceReport:
    """Dice between masks of real and synthesized videos, frames then utterances.

    ``synthesize`` maps a phoneme-id array to an (n, 3, 64, 64) video.
    ``reference="predicted"`` segments the real video with ``segnet``;
    ``reference="ground_truth"`` uses the utterance's own masks instead.
    """
    if not test_utterances:
        raise ValueError("empty test set")
    if reference not in ("predicted", "ground_truth"):
        raise ValueError(f"unknown reference {reference!r}")
    scores = {}
    for u in test_utterances:
        video = synthesize(u.phoneme_ids)
        if video.shape != u.video.shape:
            raise ValueError(f"{u.utt_id}: synthesized shape {video.shape} != {u.video.shape}")
        if reference == "ground_truth":
            if u.gt_masks is None:
                raise ValueError(f"{u.utt_id} has no ground-truth masks")
            ref = u.gt_masks
        else:
            ref = predict_masks(segnet, u.video)
        scores[u.utt_id] = mask_set_dice(ref, predict_masks(segnet, video))
    return report_from_scores(scores, subject or test_utterances[0].subject_id, variant)


def save_segnet(path, model: SegNet, subject: str = "", extra: dict | None = None):
    meta = {"kind": "segnet", "subject": subject, "segnet_config": model.config.to_dict(), **(extra or {})}
    return save_checkpoint(path, {"segnet": model.state_dict()}, meta)


def load_segnet(path) -> tuple[SegNet, dict]:
    meta, states = load_checkpoint(path)
    if meta["kind"] != "segnet":
        raise ValueError(f"{path} is a {meta['kind']} checkpoint, not segnet")
    model = SegNet(SegNetConfig(**meta["segnet_config"]))
    model.load_state_dict(states["segnet"])
    model.eval()
    return model, meta
