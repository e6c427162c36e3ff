"""Checkpoint files: named state dicts plus an embedded JSON metadata block
carrying configs and a content hash of the parameters."""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import torch

CHECKPOINT_FORMAT = 1


def state_hash(states: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(states):
        for key in sorted(states[name]):
            h.update(f"{name}.{key}".encode())
            h.update(states[name][key].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(path: str | Path, states: dict, metadata: dict) -> Path:
    """One file holding named state dicts plus a JSON metadata block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(metadata, format=CHECKPOINT_FORMAT, content_hash=state_hash(states))
    payload = {
        "metadata": json.dumps(meta, sort_keys=True),
        "states": {k: {n: t.detach().cpu().clone() for n, t in v.items()} for k, v in states.items()},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    path.write_bytes(buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    meta = json.loads(payload["metadata"])
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')}")
    if state_hash(payload["states"]) != meta["content_hash"]:
        raise ValueError(f"{path}: parameter hash does not match metadata")
    return meta, payload["states"]
