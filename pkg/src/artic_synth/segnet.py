"""SegNet with one shared encoder and three decoder heads, one per ATB mask.

Decoders upsample with the encoder's max-pooling indices. Each head emits
two-class logits per pixel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

N_HEADS = 3


@dataclass
class SegNetConfig:
    channels: tuple[int, ...] = (16, 32, 64, 64)
    n_heads: int = N_HEADS
    n_classes: int = 2

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.n_heads != N_HEADS:
            raise ValueError("SegNet has exactly three decoder heads")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channels"] = list(out["channels"])
        return out


def _conv_bn_relu(in_c: int, out_c: int) -> list[nn.Module]:
    return [nn.Conv2d(in_c, out_c, 3, padding=1, bias=False), nn.BatchNorm2d(out_c), nn.ReLU()]


class _Decoder(nn.Module):
    def __init__(self, channels: tuple[int, ...], n_classes: int):
        super().__init__()
        stages = []
        rev = list(channels[::-1])
        for i, c in enumerate(rev):
            out_c = rev[i + 1] if i + 1 < len(rev) else channels[0]
            stages.append(nn.Sequential(*_conv_bn_relu(c, c), *_conv_bn_relu(c, out_c)))
        self.stages = nn.ModuleList(stages)
        self.classify = nn.Conv2d(channels[0], n_classes, 3, padding=1)

    def forward(self, x, indices, sizes):
        for stage, idx, size in zip(self.stages, reversed(indices), reversed(sizes)):
            x = F.max_unpool2d(x, idx, 2, 2, output_size=size)
            x = stage(x)
        return self.classify(x)


class SegNet(nn.Module):
    def __init__(self, config: SegNetConfig | None = None):
        super().__init__()
        self.config = config = config or SegNetConfig()
        stages, c = [], 3
        for out_c in config.channels:
            stages.append(nn.Sequential(*_conv_bn_relu(c, out_c), *_conv_bn_relu(out_c, out_c)))
            c = out_c
        self.encoder = nn.ModuleList(stages)
        self.heads = nn.ModuleList(_Decoder(config.channels, config.n_classes) for _ in range(config.n_heads))

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        """frames (b, 3, 64, 64) -> three (b, 2, 64, 64) logit maps."""
        indices, sizes = [], []
        x = frames
        for stage in self.encoder:
            x = stage(x)
            sizes.append(x.shape[-2:])
            x, idx = F.max_pool2d(x, 2, 2, return_indices=True)
            indices.append(idx)
        return [head(x, indices, sizes) for head in self.heads]


def segmentation_loss(logits: list[torch.Tensor], masks: torch.Tensor) -> torch.Tensor:
    """Sum over heads of per-pixel cross-entropy; masks (b, 3, h, w) in {0, 1}."""
    return sum(F.cross_entropy(lg, masks[:, k].long()) for k, lg in enumerate(logits))


def logits_to_masks(logits: list[torch.Tensor]) -> torch.Tensor:
    """(b, 3, h, w) uint8 masks; a pixel is foreground only if its class-1
    logit strictly exceeds class 0, so ties resolve to background."""
    return torch.stack([(lg[:, 1] > lg[:, 0]) for lg in logits], dim=1).to(torch.uint8)
