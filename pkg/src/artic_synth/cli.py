"""Command-line entry point: ``artic-synth <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import shutil
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    DEFAULT_INVENTORY,
    FRAME_RATE,
    CorpusError,
    PhonemeInventory,
    align_phonemes_to_frames,
    list_subjects,
    n_frames_for_duration,
    read_alignments,
    read_corpus,
    save_video_png,
    select,
    split_utterances,
    write_corpus,
)
from .cvae import CVAEConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import (
    SegTrainConfig,
    evaluate_model,
    load_segnet,
    save_segnet,
    train_segnet,
)
from .segnet import SegNetConfig
from .synthetic import SyntheticConfig, generate_synthetic_corpus
from .training import TrainConfig, load_checkpoint, load_cvae, load_seq2seq, train_cvae, train_s2s

log = logging.getLogger("artic_synth")

CACHE_ENV = "ARTIC_SYNTH_CACHE"


class UsageError(Exception):
    """Bad arguments or inconsistent inputs (exit code 2)."""


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "artic_synth"))


# config files ----------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "n_layers": "12",
    "d_model": "512",
    "n_heads": "8",
    "ff_dim": "2048",
    "dropout": "0.1",
    "res_channels": "64,64,16",
    "up_channels": "32,16",
    "learning_rate": "1e-4",
    "max_epochs": "200",
    "patience": "10",
    "grad_clip": "1.0",
    "cvae_epochs": "5",
    "cvae_batch_size": "64",
    "cvae_learning_rate": "1e-3",
    "latent_dim": "64",
    "feature_channels": "32",
    "seg_channels": "16,32,64,64",
    "seg_epochs": "10",
    "seg_finetune_epochs": "5",
    "seg_learning_rate": "3e-3",
    "seg_finetune_learning_rate": "1e-3",
    "seg_batch_size": "16",
    "split_seed": "0",
}


def read_config(path: str | Path | None) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string("[config]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    return dict(parser["config"])


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(",") if v.strip())


def _opt_float(value: str) -> float | None:
    return None if value.strip().lower() in ("", "none", "off", "0") else float(value)


def resolve_train_config(path, seed: int) -> dict[str, str]:
    cfg = dict(TRAIN_DEFAULTS)
    user = read_config(path)
    unknown = set(user) - set(cfg)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg.update(user)
    cfg["seed"] = str(seed)
    return cfg


# manifests ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, config: dict, inputs: dict, outputs: list[Path], seed: int, started: str) -> Path:
    files = []
    for out in outputs:
        out = Path(out)
        files.extend(sorted(p for p in out.rglob("*") if p.is_file()) if out.is_dir() else [out])
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "started": started,
        "finished": _now(),
        "artifacts": {_rel(p, path.parent): _sha256(p) for p in files if p.resolve() != path.resolve()},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _rel(p: Path, root: Path) -> str:
    try:
        return str(p.resolve().relative_to(root.resolve()))
    except ValueError:
        return str(p)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# commands ------------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    started = _now()
    if args.sentences < 1:
        raise UsageError("--sentences must be >= 1")
    cfg_raw = read_config(args.config)
    try:
        config = SyntheticConfig.from_mapping(cfg_raw)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad synthetic config: {exc}") from None
    out = Path(args.out) if args.out else cache_dir() / "synthetic" / f"seed{args.seed}"
    utts = generate_synthetic_corpus(args.sentences, DEFAULT_INVENTORY, args.seed, config)
    write_corpus(utts, out)
    resolved = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()}
    write_manifest(
        out / "run_manifest.json",
        "gen-synthetic",
        {"sentences": args.sentences, **resolved},
        {"config": args.config},
        [out],
        args.seed,
        started,
    )
    print(f"wrote {len(utts)} utterances to {out}")
    return 0


def _load_subject(corpus: Path, subject: str) -> list:
    if subject not in list_subjects(corpus):
        raise UsageError(f"subject {subject!r} not found in {corpus}")
    return read_corpus(corpus, subject)


def cmd_train(args) -> int:
    started = _now()
    cfg = resolve_train_config(args.config, args.seed)
    if args.variant == "s2s-v" and not args.cvae_ckpt:
        raise UsageError("--variant s2s-v requires --cvae-ckpt (train one with --variant cvae)")
    corpus = Path(args.corpus)
    out = Path(args.out) if args.out else cache_dir() / "runs" / args.subject / args.variant
    out.mkdir(parents=True, exist_ok=True)
    utts = _load_subject(corpus, args.subject)
    split = split_utterances(utts, int(cfg["split_seed"]))
    train, val = select(utts, split.train), select(utts, split.val)
    seed = args.seed
    train_cfg = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        max_epochs=int(cfg["max_epochs"]),
        patience=int(cfg["patience"]),
        grad_clip=_opt_float(cfg["grad_clip"]),
        cvae_epochs=int(cfg["cvae_epochs"]),
        cvae_batch_size=int(cfg["cvae_batch_size"]),
        cvae_learning_rate=float(cfg["cvae_learning_rate"]),
        seed=seed,
    )
    ckpt = out / f"{args.subject}_{args.variant}.ckpt"
    log_path = out / "train_log.jsonl"
    extra = {"inventory": list(DEFAULT_INVENTORY.symbols), "split_seed": int(cfg["split_seed"])}
    inputs = {"corpus": corpus, "subject": args.subject}

    if args.variant == "cvae":
        fc = int(cfg["feature_channels"])
        cvae_cfg = CVAEConfig(
            vocab_size=len(DEFAULT_INVENTORY),
            latent_dim=int(cfg["latent_dim"]),
            decoder_channels=(64, fc, 32, 16, 16),
            feature_channels=fc,
        )
        model, report = train_cvae(train + val, cvae_cfg, train_cfg, None, log_path, args.subject)
        from .training import save_cvae

        save_cvae(ckpt, model, args.subject, {**extra, "train_config": train_cfg.to_dict()})
    elif args.variant in ("s2s", "s2s-v"):
        prior = None
        if args.variant == "s2s-v":
            prior, cmeta = load_cvae(args.cvae_ckpt)
            if cmeta.get("subject") != args.subject:
                raise UsageError(f"CVAE checkpoint belongs to subject {cmeta.get('subject')!r}")
            inputs["cvae_ckpt"] = args.cvae_ckpt
        d_model = int(cfg["d_model"])
        enc_cfg = EncoderConfig(
            vocab_size=len(DEFAULT_INVENTORY),
            n_layers=int(cfg["n_layers"]),
            d_model=d_model,
            n_heads=int(cfg["n_heads"]),
            ff_dim=int(cfg["ff_dim"]),
            dropout=float(cfg["dropout"]),
        )
        dec_cfg = DecoderConfig(
            d=d_model // 64,
            res_channels=_ints(cfg["res_channels"]),
            up_channels=_ints(cfg["up_channels"]),
            cvae_feature_channels=prior.config.feature_channels if prior else int(cfg["feature_channels"]),
            variant=args.variant,
        )
        model, report = train_s2s(train, val, enc_cfg, dec_cfg, train_cfg, prior, None, log_path, args.subject)
        from .training import corpus_hash, save_seq2seq

        save_seq2seq(
            ckpt,
            model,
            args.subject,
            {**extra, "train_config": train_cfg.to_dict(), "corpus_hash": corpus_hash(train), "best_epoch": report.best_epoch},
        )
    else:  # segnet
        pooled = []
        per_subject = {}
        for subject in list_subjects(corpus):
            s_utts = utts if subject == args.subject else read_corpus(corpus, subject)
            s_split = split_utterances(s_utts, int(cfg["split_seed"]))
            s_train = select(s_utts, s_split.train)
            pooled.extend(s_train)
            if subject == args.subject:
                per_subject[subject] = s_train
        seg_cfg = SegTrainConfig(
            epochs=int(cfg["seg_epochs"]),
            finetune_epochs=int(cfg["seg_finetune_epochs"]),
            learning_rate=float(cfg["seg_learning_rate"]),
            finetune_learning_rate=float(cfg["seg_finetune_learning_rate"]),
            batch_size=int(cfg["seg_batch_size"]),
            seed=seed,
        )
        _, models = train_segnet(pooled, per_subject, seg_cfg, SegNetConfig(channels=_ints(cfg["seg_channels"])))
        save_segnet(ckpt, models[args.subject], args.subject, {**extra, "seg_train_config": seg_cfg.to_dict()})
        log_path.write_text("")
    write_manifest(out / "run_manifest.json", "train", {"variant": args.variant, **cfg}, inputs, [ckpt, log_path], seed, started)
    print(f"wrote {ckpt}")
    return 0


def _inventory_from(meta: dict) -> PhonemeInventory:
    symbols = meta.get("inventory")
    return PhonemeInventory(symbols) if symbols else DEFAULT_INVENTORY


def _ffmpeg() -> str:
    ffmpeg = shutil.which("ffmpeg")
    if ffmpeg is None:
        raise RuntimeError("MP4 export needs an ffmpeg binary on PATH; use --export png")
    return ffmpeg


def export_mp4(frames_dir: Path, out_file: Path, frame_rate: float) -> Path:
    ffmpeg = _ffmpeg()
    subprocess.run(
        [ffmpeg, "-y", "-loglevel", "error", "-framerate", str(frame_rate), "-i",
         str(frames_dir / "frame_%05d.png"), "-pix_fmt", "yuv420p", str(out_file)],
        check=True,
    )
    return out_file


def cmd_synthesize(args, seed_given: bool) -> int:
    started = _now()
    if args.export == "mp4":
        _ffmpeg()
    model, meta = load_seq2seq(args.ckpt)
    inventory = _inventory_from(meta)
    alignments = read_alignments(args.alignment)
    if args.utt_id:
        if args.utt_id not in alignments:
            raise UsageError(f"utterance {args.utt_id!r} not in {args.alignment}")
        records = alignments[args.utt_id]
    elif len(alignments) == 1:
        records = next(iter(alignments.values()))
    else:
        raise UsageError(f"{args.alignment} holds {len(alignments)} utterances; pass --utt-id")
    n = n_frames_for_duration(records, args.frame_rate)
    if n < 1:
        raise CorpusError("alignment is shorter than one frame")
    ids = align_phonemes_to_frames(records, n, args.frame_rate, inventory)
    if model.variant == "s2s" and seed_given:
        log.warning("s2s checkpoints are deterministic; --seed is ignored")
    video = model.synthesize(ids, seed=args.seed)
    out = Path(args.out)
    outputs = save_video_png(video, out)
    if args.export == "mp4":
        outputs.append(export_mp4(out, out / "video.mp4", args.frame_rate))
    write_manifest(
        out / "run_manifest.json",
        "synthesize",
        {"variant": model.variant, "frame_rate": args.frame_rate, "n_frames": n, "export": args.export},
        {"ckpt": args.ckpt, "alignment": args.alignment},
        outputs,
        args.seed,
        started,
    )
    print(f"wrote {n} frames to {out}")
    return 0


def _manifest_subject(ckpt: str) -> str | None:
    path = Path(ckpt).parent / "run_manifest.json"
    if path.exists():
        return json.loads(path.read_text()).get("inputs", {}).get("subject")
    return None


def cmd_evaluate(args) -> int:
    started = _now()
    seg_meta, _ = load_checkpoint(args.segnet_ckpt)
    model_meta, _ = load_checkpoint(args.model_ckpt)
    seg_subject, model_subject = seg_meta.get("subject"), model_meta.get("subject")
    for ckpt, subj in ((args.segnet_ckpt, seg_subject), (args.model_ckpt, model_subject)):
        m = _manifest_subject(ckpt)
        if m is not None and m != subj:
            raise UsageError(f"{ckpt}: manifest subject {m!r} != checkpoint subject {subj!r}")
    if seg_subject != model_subject:
        raise UsageError(f"subject mismatch: segnet {seg_subject!r} vs model {model_subject!r}")
    segnet, _ = load_segnet(args.segnet_ckpt)
    model, _ = load_seq2seq(args.model_ckpt)
    utts = _load_subject(Path(args.corpus), model_subject)
    split = split_utterances(utts, int(model_meta.get("split_seed", 0)))
    test = select(utts, split.part(args.split))
    report = evaluate_model(
        segnet, lambda ids: model.synthesize(ids, seed=args.seed), test, model_subject, model.variant
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "evaluate",
        {"split": args.split},
        {"segnet_ckpt": args.segnet_ckpt, "model_ckpt": args.model_ckpt, "corpus": args.corpus, "subject": model_subject},
        [out],
        args.seed,
        started,
    )
    for r in report.rows:
        print(f"{r.subject}\t{r.variant}\t{r.mask}\t{r.mean:.4f} ({r.std:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artic-synth", description="Phoneme-to-rtMRI video synthesis toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="render a procedural corpus with masks")
    p.add_argument("--out")
    p.add_argument("--sentences", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    p = sub.add_parser("train", help="train cvae, s2s, s2s-v or segnet for one subject")
    p.add_argument("--variant", choices=("cvae", "s2s", "s2s-v", "segnet"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--subject", required=True)
    p.add_argument("--out")
    p.add_argument("--cvae-ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    p = sub.add_parser("synthesize", help="render video for an alignment file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--utt-id")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frame-rate", type=float, default=FRAME_RATE)
    p.add_argument("--export", choices=("png", "mp4"), default="png")

    p = sub.add_parser("evaluate", help="dice report of a model against real videos")
    p.add_argument("--segnet-ckpt", required=True)
    p.add_argument("--model-ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "synthesize":
            seed_given = args.seed is not None
            if not seed_given:
                args.seed = 0
            return cmd_synthesize(args, seed_given)
        return cmd_evaluate(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("command failed", exc_info=True)
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
