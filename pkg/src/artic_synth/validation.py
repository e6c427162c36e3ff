"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .corpus import FRAME_SIZE

FRAME_SHAPE = (3, FRAME_SIZE, FRAME_SIZE)


def check_phoneme_ids(ids, vocab_size: int | None = None, allow_pad: bool = True) -> np.ndarray:
    """Return ``ids`` as a non-empty 1-D int64 array, range-checked."""
    arr = np.asarray(ids)
    if arr.ndim != 1:
        raise ValueError(f"phoneme ids must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("phoneme sequence is empty")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise ValueError("phoneme ids must be integers")
    arr = arr.astype(np.int64)
    lo = 0 if allow_pad else 1
    if arr.min() < lo or (vocab_size is not None and arr.max() >= vocab_size):
        raise ValueError(f"phoneme id out of range [{lo}, {vocab_size}): {arr.min()}..{arr.max()}")
    return arr


def check_frames(frames, name: str = "frames") -> np.ndarray:
    """(N, 3, 64, 64) float32 array with values in [0, 1]."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1:] != FRAME_SHAPE:
        raise ValueError(f"{name} must have shape (N, 3, 64, 64), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_masks(masks, n: int | None = None) -> np.ndarray:
    """(N, 3, 64, 64) binary uint8 array."""
    arr = np.asarray(masks)
    if arr.ndim != 4 or arr.shape[1:] != FRAME_SHAPE:
        raise ValueError(f"masks must have shape (N, 3, 64, 64), got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{arr.shape[0]} masks for {n} frames")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("masks must be binary")
    return arr.astype(np.uint8)


def check_sequence_pairs(X, y, vocab_size: int | None = None):
    """Validate paired lists of phoneme-id sequences and videos of equal length."""
    if len(X) != len(y):
        raise ValueError(f"{len(X)} phoneme sequences for {len(y)} videos")
    if len(X) == 0:
        raise ValueError("no training sequences")
    ids = [check_phoneme_ids(x, vocab_size, allow_pad=False) for x in X]
    videos = [check_frames(v, "video") for v in y]
    for i, (a, v) in enumerate(zip(ids, videos)):
        if a.shape[0] != v.shape[0]:
            raise ValueError(f"sequence {i}: {a.shape[0]} phonemes for {v.shape[0]} frames")
    return ids, videos
