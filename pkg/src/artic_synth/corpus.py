"""Frame-aligned utterances: phoneme inventory, alignment parsing, frame
loading, corpus I/O and sentence-level splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

FRAME_RATE = 23.18
FRAME_SIZE = 64
PAD = "<pad>"
SILENCE = "sil"

ARPABET = (
    "aa ae ah ao aw ay b ch d dh eh er ey f g hh ih iy jh k "
    "l m n ng ow oy p r s sh t th uh uw v w y z zh"
).split()


class CorpusError(ValueError):
    """Raised for malformed alignments, frame directories or manifests."""


class PhonemeInventory:
    """Ordered phoneme alphabet with padding at index 0 and silence at index 1."""

    def __init__(self, symbols: Iterable[str] = ARPABET):
        symbols = [s for s in symbols if s not in (PAD, SILENCE)]
        self.symbols = (PAD, SILENCE, *symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("phoneme symbols must be unique")
        self._index = {s: i for i, s in enumerate(self.symbols)}

    pad_id = 0
    silence_id = 1

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, PhonemeInventory) and self.symbols == other.symbols

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise CorpusError(f"unknown phoneme label {label!r}") from None

    def label(self, index: int) -> str:
        return self.symbols[index]

    @property
    def phonemes(self) -> tuple[str, ...]:
        """Symbols excluding padding and silence."""
        return self.symbols[2:]


DEFAULT_INVENTORY = PhonemeInventory()


@dataclass(frozen=True)
class AlignmentRecord:
    phoneme: str
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0 or not self.end > self.start:
            raise CorpusError(
                f"invalid interval for {self.phoneme!r}: [{self.start}, {self.end})"
            )


@dataclass
class ATBMaskSet:
    """Three binary region masks per frame, each of shape (n, 64, 64)."""

    mask1: np.ndarray
    mask2: np.ndarray
    mask3: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in self}
        if len(shapes) != 1:
            raise ValueError(f"mask shapes differ: {sorted(shapes)}")
        for i, m in enumerate(self, start=1):
            if m.ndim != 3:
                raise ValueError(f"mask{i} must be (n, h, w), got {m.shape}")
            if not np.isin(m, (0, 1)).all():
                raise ValueError(f"mask{i} is not binary")

    def __iter__(self):
        return iter((self.mask1, self.mask2, self.mask3))

    def __len__(self) -> int:
        return self.mask1.shape[0]

    def stack(self) -> np.ndarray:
        """(n, 3, h, w) uint8 array, one channel per mask."""
        return np.stack(list(self), axis=1).astype(np.uint8)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "ATBMaskSet":
        arr = np.asarray(arr).astype(np.uint8)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


@dataclass
class Utterance:
    utt_id: str
    subject_id: str
    phoneme_ids: np.ndarray
    video: np.ndarray
    frame_rate: float = FRAME_RATE
    sentence_id: str | None = None
    gt_masks: ATBMaskSet | None = None
    alignment: list[AlignmentRecord] = field(default_factory=list)

    def __post_init__(self):
        self.phoneme_ids = np.asarray(self.phoneme_ids, dtype=np.int64)
        check_video(self.video)
        n = self.video.shape[0]
        if self.phoneme_ids.shape != (n,):
            raise CorpusError(
                f"{self.utt_id}: {self.phoneme_ids.shape[0]} phonemes for {n} frames"
            )
        if (self.phoneme_ids == PhonemeInventory.pad_id).any():
            raise CorpusError(f"{self.utt_id}: padding id in phoneme sequence")
        if self.gt_masks is not None and len(self.gt_masks) != n:
            raise CorpusError(f"{self.utt_id}: mask count differs from frame count")
        if self.sentence_id is None:
            self.sentence_id = self.utt_id

    @property
    def n_frames(self) -> int:
        return self.video.shape[0]


def check_video(video: np.ndarray) -> np.ndarray:
    """Validate an (n, 3, 64, 64) video with values in [0, 1]."""
    if video.ndim != 4 or video.shape[1:] != (3, FRAME_SIZE, FRAME_SIZE):
        raise CorpusError(f"video must be (n, 3, 64, 64), got {video.shape}")
    if video.shape[0] < 1:
        raise CorpusError("video has no frames")
    if not (np.all(video >= 0.0) and np.all(video <= 1.0)):
        raise CorpusError("video values outside [0, 1]")
    return video


def _check_contiguous(records: Sequence[AlignmentRecord], tol: float = 1e-6) -> None:
    for prev, cur in zip(records, records[1:]):
        if abs(cur.start - prev.end) > tol:
            raise CorpusError(
                f"records not contiguous: {prev.phoneme!r} ends at {prev.end}, "
                f"{cur.phoneme!r} starts at {cur.start}"
            )


def align_phonemes_to_frames(
    records: Sequence[AlignmentRecord],
    n_frames: int,
    frame_rate: float = FRAME_RATE,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
) -> np.ndarray:
    """Assign each video frame the phoneme whose interval holds its midpoint.

    Midpoints past the final record take the final phoneme; midpoints before
    the first record's start take silence.
    """
    if not records:
        raise CorpusError("empty alignment")
    if n_frames < 1:
        raise CorpusError("n_frames must be >= 1")
    if frame_rate <= 0:
        raise CorpusError("frame_rate must be positive")
    _check_contiguous(records)
    ids = np.array([inventory.index(r.phoneme) for r in records], dtype=np.int64)
    ends = np.array([r.end for r in records])

    mid = (np.arange(n_frames) + 0.5) / frame_rate
    pos = np.searchsorted(ends, mid, side="right")
    out = ids[np.minimum(pos, len(records) - 1)]
    out[mid < records[0].start] = inventory.silence_id
    return out


def n_frames_for_duration(records: Sequence[AlignmentRecord], frame_rate: float) -> int:
    """floor(total duration * frame_rate), tolerant to decimal rounding in files."""
    # six-decimal timestamps put the product within ~1e-5 of an integer boundary
    return int(math.floor(records[-1].end * frame_rate + 1e-4))


# alignment files ------------------------------------------------------------


def read_alignments(path: str | Path) -> dict[str, list[AlignmentRecord]]:
    """Parse ``utt_id<TAB>phoneme<TAB>start<TAB>end`` lines, keyed by utt_id."""
    out: dict[str, list[AlignmentRecord]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected 4 tab-separated fields")
            utt, ph, start, end = parts
            try:
                rec = AlignmentRecord(ph, float(start), float(end))
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            out.setdefault(utt, []).append(rec)
    return out


def write_alignments(path: str | Path, alignments: Mapping[str, Sequence[AlignmentRecord]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt, records in alignments.items():
            for r in records:
                fh.write(f"{utt}\t{r.phoneme}\t{r.start:.6f}\t{r.end:.6f}\n")


# frames ----------------------------------------------------------------------


def load_frame(path: str | Path) -> np.ndarray:
    """Read one image as a (3, 64, 64) float32 array in [0, 1].

    Intensities are divided by the maximum of the source bit depth
    (255 for 8-bit, 65535 for 16-bit) before bilinear resizing.
    """
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB", "I;16", "I;16B", "I;16L", "I"):
                img = img.convert("RGB")
            arr = np.asarray(img)
    except (UnidentifiedImageError, OSError) as exc:
        raise CorpusError(f"cannot read frame {path}: {exc}") from None

    scale = 65535.0 if arr.dtype.itemsize > 1 else 255.0
    arr = arr.astype(np.float32) / scale
    if arr.ndim == 2:
        arr = arr[..., None]
    planes = []
    for c in range(arr.shape[-1]):
        plane = arr[..., c]
        if plane.shape != (FRAME_SIZE, FRAME_SIZE):
            plane = np.asarray(
                Image.fromarray(plane, mode="F").resize((FRAME_SIZE, FRAME_SIZE), Image.BILINEAR)
            )
        planes.append(plane)
    if len(planes) == 1:
        planes = planes * 3
    return np.clip(np.stack(planes), 0.0, 1.0).astype(np.float32)


def list_frames(frames_dir: str | Path, prefix: str = "frame") -> list[Path]:
    return sorted(Path(frames_dir).glob(f"{prefix}_*.png"))


def load_video(frames_dir: str | Path) -> np.ndarray:
    paths = list_frames(frames_dir)
    if not paths:
        raise CorpusError(f"no frames in {frames_dir}")
    sizes = set()
    for p in paths:
        try:
            with Image.open(p) as img:
                sizes.add(img.size)
        except (UnidentifiedImageError, OSError) as exc:
            raise CorpusError(f"cannot read frame {p}: {exc}") from None
    if len(sizes) != 1:
        raise CorpusError(f"frames in {frames_dir} differ in size: {sorted(sizes)}")
    video = np.stack([load_frame(p) for p in paths])
    assert video.min() >= 0.0 and video.max() <= 1.0
    return video


def load_masks(frames_dir: str | Path) -> ATBMaskSet | None:
    stacks = []
    for k in (1, 2, 3):
        paths = list_frames(frames_dir, prefix=f"mask{k}")
        if not paths:
            return None
        stacks.append(
            np.stack([(np.asarray(Image.open(p).convert("L")) > 127) for p in paths]).astype(np.uint8)
        )
    return ATBMaskSet(*stacks)


def to_uint8(video: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(video, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_video_png(video: np.ndarray, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(to_uint8(video)):
        p = out_dir / f"frame_{i:05d}.png"
        Image.fromarray(frame.transpose(1, 2, 0), mode="RGB").save(p)
        paths.append(p)
    return paths


def save_masks_png(masks: ATBMaskSet, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, m in enumerate(masks, start=1):
        for i, frame in enumerate(m):
            Image.fromarray((frame * 255).astype(np.uint8), mode="L").save(
                out_dir / f"mask{k}_{i:05d}.png"
            )


def load_utterance(
    alignment_path: str | Path,
    frames_dir: str | Path,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
    *,
    utt_id: str | None = None,
    subject_id: str = "",
    frame_rate: float = FRAME_RATE,
    sentence_id: str | None = None,
) -> Utterance:
    alignments = read_alignments(alignment_path)
    if utt_id is None:
        if len(alignments) != 1:
            raise CorpusError(f"{alignment_path} holds {len(alignments)} utterances; pass utt_id")
        utt_id = next(iter(alignments))
    if utt_id not in alignments:
        raise CorpusError(f"utterance {utt_id!r} not in {alignment_path}")
    records = alignments[utt_id]
    video = load_video(frames_dir)
    ids = align_phonemes_to_frames(records, video.shape[0], frame_rate, inventory)
    return Utterance(
        utt_id=utt_id,
        subject_id=subject_id,
        phoneme_ids=ids,
        video=video,
        frame_rate=frame_rate,
        sentence_id=sentence_id,
        gt_masks=load_masks(frames_dir),
        alignment=list(records),
    )


# corpus directories ----------------------------------------------------------


def write_corpus(utterances: Sequence[Utterance], out_dir: str | Path) -> list[Path]:
    """Write utterances as ``<out>/<subject>/{alignments.tsv,manifest.json,<utt>/}``.

    Returns the manifest paths, one per subject.
    """
    out_dir = Path(out_dir)
    by_subject: dict[str, list[Utterance]] = {}
    for u in utterances:
        by_subject.setdefault(u.subject_id, []).append(u)
    manifests = []
    for subject, utts in sorted(by_subject.items()):
        sdir = out_dir / subject
        sdir.mkdir(parents=True, exist_ok=True)
        write_alignments(sdir / "alignments.tsv", {u.utt_id: u.alignment for u in utts})
        manifest = {}
        for u in utts:
            save_video_png(u.video, sdir / u.utt_id)
            if u.gt_masks is not None:
                save_masks_png(u.gt_masks, sdir / u.utt_id)
            manifest[u.utt_id] = {
                "alignment": "alignments.tsv",
                "frames": u.utt_id,
                "frame_rate": u.frame_rate,
                "sentence": u.sentence_id,
            }
        path = sdir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        manifests.append(path)
    return manifests


def list_subjects(corpus_dir: str | Path) -> list[str]:
    return sorted(p.parent.name for p in Path(corpus_dir).glob("*/manifest.json"))


def read_corpus(
    corpus_dir: str | Path,
    subject: str,
    inventory: PhonemeInventory = DEFAULT_INVENTORY,
) -> list[Utterance]:
    sdir = Path(corpus_dir) / subject
    manifest_path = sdir / "manifest.json"
    if not manifest_path.exists():
        raise CorpusError(f"no manifest for subject {subject!r} in {corpus_dir}")
    manifest = json.loads(manifest_path.read_text())
    cache: dict[str, dict[str, list[AlignmentRecord]]] = {}
    utts = []
    for utt_id, entry in sorted(manifest.items()):
        apath = sdir / entry["alignment"]
        if apath not in cache:
            cache[apath] = read_alignments(apath)
        if utt_id not in cache[apath]:
            raise CorpusError(f"utterance {utt_id!r} missing from {apath}")
        frame_rate = float(entry.get("frame_rate", FRAME_RATE))
        video = load_video(sdir / entry["frames"])
        records = cache[apath][utt_id]
        utts.append(
            Utterance(
                utt_id=utt_id,
                subject_id=subject,
                phoneme_ids=align_phonemes_to_frames(records, video.shape[0], frame_rate, inventory),
                video=video,
                frame_rate=frame_rate,
                sentence_id=entry.get("sentence"),
                gt_masks=load_masks(sdir / entry["frames"]),
                alignment=list(records),
            )
        )
    return utts


# splits ----------------------------------------------------------------------


@dataclass
class CorpusSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    sentences: dict[str, list[str]] = field(default_factory=dict)
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def part(self, name: str) -> list[str]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def make_splits(
    groups: Mapping[str, Sequence[str]],
    seed: int = 0,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> CorpusSplit:
    """Partition sentences 80/10/10 and expand each sentence to its utt_ids.

    ``groups`` maps sentence id to the utt_ids (one per subject) of that
    sentence, so every subject receives the same sentence assignment.
    """
    sentences = sorted(groups)
    if len(sentences) < 10:
        raise CorpusError(f"need at least 10 sentences to split, got {len(sentences)}")
    rng = np.random.default_rng(seed)
    order = [sentences[i] for i in rng.permutation(len(sentences))]
    n_val = int(math.floor(fractions[1] * len(order) + 1e-9))
    n_test = int(math.floor(fractions[2] * len(order) + 1e-9))
    n_train = len(order) - n_val - n_test
    parts = {
        "train": sorted(order[:n_train]),
        "val": sorted(order[n_train : n_train + n_val]),
        "test": sorted(order[n_train + n_val :]),
    }

    def expand(sents):
        return [utt for s in sents for utt in groups[s]]

    return CorpusSplit(
        train=expand(parts["train"]),
        val=expand(parts["val"]),
        test=expand(parts["test"]),
        sentences=parts,
        fractions=fractions,
    )


def split_utterances(utterances: Sequence[Utterance], seed: int = 0) -> CorpusSplit:
    """Sentence-level split of utterances from one or more subjects."""
    groups: dict[str, list[str]] = {}
    subjects: dict[str, set[str]] = {}
    for u in utterances:
        groups.setdefault(u.sentence_id, []).append(u.utt_id)
        subjects.setdefault(u.sentence_id, set()).add(u.subject_id)
    if len({frozenset(s) for s in subjects.values()}) > 1:
        raise CorpusError("subjects do not share one sentence set")
    return make_splits(groups, seed)


def select(utterances: Sequence[Utterance], utt_ids: Iterable[str]) -> list[Utterance]:
    wanted = set(utt_ids)
    return [u for u in utterances if u.utt_id in wanted]
