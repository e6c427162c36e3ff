"""Procedural midsagittal vocal-tract corpus with analytic region masks.

Each phoneme owns a fixed articulator configuration (tongue tip/body/back
heights, velum lowering, lip opening, pharyngeal wall offset). Frames are
rendered from per-frame configurations; at every phoneme boundary the two
straddling frames are linearly crossfaded between the neighbouring
configurations. The three masks come from the same geometry:

* mask1: tissue above the palate line (shape depends on the velum)
* mask2: tongue and jaw below the tongue surface
* mask3: pharyngeal wall at the back of the tract
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import gaussian_filter
from scipy.stats import qmc

from .corpus import (
    DEFAULT_INVENTORY,
    FRAME_RATE,
    FRAME_SIZE,
    AlignmentRecord,
    ATBMaskSet,
    PhonemeInventory,
    Utterance,
)

# parameter order: tip, body, back, velum, lips, pharynx
N_PARAMS = 6
_LOW = np.array([24.0, 22.0, 24.0, 0.0, 0.0, 0.0])
_HIGH = np.array([42.0, 40.0, 42.0, 1.0, 1.0, 3.0])
_NEUTRAL = np.array([36.0, 32.0, 34.0, 0.1, 0.2, 1.5])

AIR = 0.08
TISSUE = 0.78


@dataclass
class SyntheticConfig:
    frame_rate: float = FRAME_RATE
    subjects: tuple[str, ...] = ("S1",)
    min_phones: int = 4
    max_phones: int = 8
    min_duration: int = 3
    max_duration: int = 6
    silence_duration: int = 2
    n_phonemes: int | None = None
    geometry_seed: int = 7
    blur: float = 0.7
    texture: float = 0.04

    def __post_init__(self):
        if isinstance(self.subjects, str):
            self.subjects = tuple(s for s in self.subjects.split(",") if s)
        self.subjects = tuple(self.subjects)
        if self.min_duration < 2 or self.max_duration < self.min_duration:
            raise ValueError("durations must satisfy 2 <= min_duration <= max_duration")
        if self.silence_duration < 2:
            raise ValueError("silence_duration must be >= 2")
        if self.min_phones < 1 or self.max_phones < self.min_phones:
            raise ValueError("phone counts must satisfy 1 <= min_phones <= max_phones")

    @classmethod
    def from_mapping(cls, values: dict) -> "SyntheticConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise KeyError(f"unknown synthetic config key {key!r}")
            t = types[key]
            if key == "subjects":
                kwargs[key] = raw
            elif key == "n_phonemes":
                kwargs[key] = None if raw in (None, "", "none", "None") else int(raw)
            elif "float" in t:
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


def phoneme_table(inventory: PhonemeInventory, geometry_seed: int = 7) -> np.ndarray:
    """(len(inventory), 6) articulator parameters per phoneme id.

    Non-special phonemes take scrambled Halton points so configurations are
    spread through the parameter box; padding and silence are neutral.
    """
    n = len(inventory.phonemes)
    pts = qmc.Halton(d=N_PARAMS, scramble=True, seed=geometry_seed).random(n)
    table = np.empty((len(inventory), N_PARAMS))
    table[: inventory.silence_id + 1] = _NEUTRAL
    table[inventory.silence_id + 1 :] = _LOW + pts * (_HIGH - _LOW)
    return table


@dataclass(frozen=True)
class _Anatomy:
    palate_top: float
    pharynx_base: float
    texture: np.ndarray


def _anatomy(subject: str, config: SyntheticConfig) -> _Anatomy:
    rng = np.random.default_rng(zlib.crc32(subject.encode()) + config.geometry_seed)
    tex = gaussian_filter(rng.standard_normal((FRAME_SIZE, FRAME_SIZE)), 3.0)
    tex = config.texture * tex / (np.abs(tex).max() + 1e-12)
    return _Anatomy(
        palate_top=16.0 + rng.uniform(-1.0, 1.0),
        pharynx_base=55.0 + rng.uniform(-0.5, 0.5),
        texture=tex,
    )


_YY, _XX = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(float)
_COLS = np.arange(FRAME_SIZE, dtype=float)


def _palate_line(params: np.ndarray, anat: _Anatomy) -> np.ndarray:
    velum = params[3]
    y = anat.palate_top + 4.0 * ((_COLS - 28.0) / 20.0) ** 2
    behind = np.clip((_COLS - 40.0) / 10.0, 0.0, 1.0)
    return y + 8.0 * velum * behind


def _tongue_line(params: np.ndarray, palate: np.ndarray) -> np.ndarray:
    tip, body, back, _, lips, _ = params
    jaw = 3.0 * lips
    xs = [10.0, 14.0, 28.0, 42.0, 50.0]
    ys = [46.0, tip + jaw, body + jaw, back + jaw, 40.0]
    y = PchipInterpolator(xs, ys)(np.clip(_COLS, 10.0, 50.0))
    return np.maximum(y, palate + 2.0)


def render_frame(params: np.ndarray, anat: _Anatomy, config: SyntheticConfig):
    """Render one (3, 64, 64) frame and its three (64, 64) masks."""
    palate = _palate_line(params, anat)
    tongue = _tongue_line(params, palate)
    in_palate_span = (_XX >= 6) & (_XX <= 52)
    mask1 = in_palate_span & (_YY >= 4) & (_YY < palate[None, :])

    mask2 = (_XX >= 10) & (_XX <= 50) & (_YY >= tongue[None, :]) & (_YY < 58)

    wall = anat.pharynx_base + params[5] + 1.5 * np.sin(_YY / 9.0)
    mask3 = (_YY >= 14) & (_YY <= 62) & (_XX >= wall)

    gap = 4.0 * params[4]
    lips = (_XX <= 5) & (
        ((_YY >= 20) & (_YY < 30 - gap)) | ((_YY >= 34 + gap) & (_YY < 46))
    )
    # one-pixel air lines separate mask regions from skull and neck tissue
    tissue = mask1 | mask2 | mask3 | lips | (_YY >= 59) | (_YY < 3)
    img = np.where(tissue, TISSUE, AIR)
    if config.blur > 0:
        img = gaussian_filter(img, config.blur)
    img = np.clip(img + anat.texture, 0.0, 1.0)
    # quantize so on-disk 8-bit PNGs round-trip exactly
    img = np.rint(img * 255.0) / 255.0
    frame = np.repeat(img[None].astype(np.float32), 3, axis=0)
    masks = tuple(m.astype(np.uint8) for m in (mask1, mask2, mask3))
    return frame, masks


def frame_parameters(segments: list[tuple[int, int]], table: np.ndarray) -> np.ndarray:
    """Per-frame articulator parameters for (phoneme_id, n_frames) segments,
    crossfading the two frames that straddle each boundary."""
    per_frame = np.concatenate([np.repeat(table[pid][None], dur, axis=0) for pid, dur in segments])
    out = per_frame.copy()
    b = 0
    for (a_id, a_dur), (b_id, _) in zip(segments, segments[1:]):
        b += a_dur
        if a_id == b_id:
            continue
        pa, pb = table[a_id], table[b_id]
        out[b - 1] = (2.0 * pa + pb) / 3.0
        out[b] = (pa + 2.0 * pb) / 3.0
    return out


def sample_sentence(
    index: int, seed: int, inventory: PhonemeInventory, config: SyntheticConfig
) -> list[tuple[int, int]]:
    """(phoneme_id, n_frames) segments for one sentence, shared across subjects."""
    rng = np.random.default_rng([seed, index])
    pool = np.arange(inventory.silence_id + 1, len(inventory))
    if config.n_phonemes is not None:
        pool = pool[: config.n_phonemes]
    n = int(rng.integers(config.min_phones, config.max_phones + 1))
    phones = []
    for _ in range(n):
        choices = pool if not phones else pool[pool != phones[-1]]
        phones.append(int(rng.choice(choices)))
    durs = rng.integers(config.min_duration, config.max_duration + 1, size=n)
    sil = inventory.silence_id
    return (
        [(sil, config.silence_duration)]
        + [(p, int(d)) for p, d in zip(phones, durs)]
        + [(sil, config.silence_duration)]
    )


def generate_synthetic_corpus(
    n_sentences: int,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    seed: int = 0,
    config: SyntheticConfig | None = None,
) -> list[Utterance]:
    """Render ``n_sentences`` sentences for every configured subject."""
    config = config or SyntheticConfig()
    if len(inventory.phonemes) < 3:
        raise ValueError("inventory needs at least 3 non-padding phonemes")
    if config.n_phonemes is not None and not 2 <= config.n_phonemes <= len(inventory.phonemes):
        raise ValueError("n_phonemes out of range for inventory")
    table = phoneme_table(inventory, config.geometry_seed)
    fr = config.frame_rate
    sentences = [sample_sentence(i, seed, inventory, config) for i in range(n_sentences)]

    utts = []
    for subject in config.subjects:
        anat = _anatomy(subject, config)
        for i, segments in enumerate(sentences):
            params = frame_parameters(segments, table)
            rendered = [render_frame(p, anat, config) for p in params]
            video = np.stack([f for f, _ in rendered])
            masks = ATBMaskSet(*(np.stack([m[k] for _, m in rendered]) for k in range(3)))
            ids = np.concatenate([np.full(d, pid, dtype=np.int64) for pid, d in segments])
            records, t = [], 0
            for pid, d in segments:
                records.append(AlignmentRecord(inventory.label(pid), t / fr, (t + d) / fr))
                t += d
            sentence_id = f"s{i:04d}"
            utts.append(
                Utterance(
                    utt_id=f"{subject}_{sentence_id}",
                    subject_id=subject,
                    phoneme_ids=ids,
                    video=video,
                    frame_rate=fr,
                    sentence_id=sentence_id,
                    gt_masks=masks,
                    alignment=records,
                )
            )
    return utts
