"""Convolutional frame decoder.

Encoder features (n, D) are reshaped to (n, d, 8, 8) feature maps and passed
through 3D residual blocks (the sequence is the depth axis, batch of one),
two per-frame transposed 2D convolutions (8 -> 32 -> 64), and two more 3D
residual blocks ending at 3 channels and a sigmoid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

VARIANTS = ("s2s", "s2s-v")


@dataclass
class DecoderConfig:
    d: int = 8
    res_channels: tuple[int, int, int] = (64, 64, 16)
    up_channels: tuple[int, int] = (32, 16)
    tconv_strides: tuple[int, int] = (4, 2)
    cvae_feature_channels: int = 32
    variant: str = "s2s"

    def __post_init__(self):
        self.res_channels = tuple(self.res_channels)
        self.up_channels = tuple(self.up_channels)
        self.tconv_strides = tuple(self.tconv_strides)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        s = self.tconv_strides
        if len(s) != 2 or s[0] * s[1] != 8 or any(k % 2 for k in s):
            raise ValueError(f"tconv strides must multiply to 8, got {self.tconv_strides}")

    @property
    def d_model(self) -> int:
        return self.d * 64

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("res_channels", "up_channels", "tconv_strides"):
            out[k] = list(out[k])
        return out


def reshape_features(enc: torch.Tensor, d: int | None = None) -> torch.Tensor:
    """(n, D) -> (n, D/64, 8, 8), row-major per frame."""
    n, D = enc.shape
    if D % 64:
        raise ValueError(f"feature width {D} not divisible by 64")
    if d is not None and d * 64 != D:
        raise ValueError(f"feature width {D} != d*64 = {d * 64}")
    return enc.reshape(n, D // 64, 8, 8)


def flatten_features(maps: torch.Tensor) -> torch.Tensor:
    return maps.reshape(maps.shape[0], -1)


class ResBlock3D(nn.Module):
    """Two conv3d(k=3)-BN-ReLU layers with an additive skip.

    Input/output are (1, C, n, H, W). When channels change the skip uses a
    1x1x1 convolution. ``activate=False`` drops the post-sum ReLU, used for
    the last block whose output feeds a sigmoid.
    """

    def __init__(self, in_channels: int, out_channels: int, activate: bool = True):
        super().__init__()
        self.conv1 = nn.Conv3d(in_channels, out_channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(out_channels)
        self.conv2 = nn.Conv3d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(out_channels)
        self.relu = nn.ReLU()
        self.activate = activate
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv3d(in_channels, out_channels, 1, bias=False)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        out = out + self.skip(x)
        return self.relu(out) if self.activate else out


def _tconv(in_c: int, out_c: int, stride: int) -> nn.ConvTranspose2d:
    # kernel 2*stride, padding stride/2: output = input * stride exactly
    return nn.ConvTranspose2d(in_c, out_c, kernel_size=2 * stride, stride=stride, padding=stride // 2)


class Upsample2D(nn.Module):
    """Two transposed 2D convolutions over frames; the sequence axis is the batch."""

    def __init__(self, in_channels: int, channels: tuple[int, int], strides: tuple[int, int]):
        super().__init__()
        layers = []
        c = in_channels
        for out_c, s in zip(channels, strides):
            layers += [_tconv(c, out_c, s), nn.BatchNorm2d(out_c), nn.ReLU()]
            c = out_c
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-2:] != (8, 8):
            raise ValueError(f"upsampling expects 8x8 maps, got {tuple(x.shape[-2:])}")
        return self.layers(x)


def _to_volume(x: torch.Tensor) -> torch.Tensor:
    # (n, C, H, W) -> (1, C, n, H, W)
    return x.permute(1, 0, 2, 3).unsqueeze(0)


def _to_frames(x: torch.Tensor) -> torch.Tensor:
    return x.squeeze(0).permute(1, 0, 2, 3)


class FrameDecoder(nn.Module):
    def __init__(self, config: DecoderConfig):
        super().__init__()
        self.config = config
        r1, r2, r3 = config.res_channels
        extra = config.cvae_feature_channels if config.variant == "s2s-v" else 0
        self.res1 = ResBlock3D(config.d, r1)
        self.res2 = ResBlock3D(r1 + extra, r2)
        self.upsample = Upsample2D(r2, config.up_channels, config.tconv_strides)
        self.res3 = ResBlock3D(config.up_channels[-1], r3)
        self.res4 = ResBlock3D(r3, 3, activate=False)

    def forward(self, enc: torch.Tensor, cvae_features: torch.Tensor | None = None) -> torch.Tensor:
        """enc: (n, D); cvae_features: (n, c_F, 8, 8) for s2s-v. Returns (n, 3, 64, 64)."""
        n = enc.shape[0]
        if self.config.variant == "s2s-v":
            if cvae_features is None:
                raise ValueError("s2s-v decoder requires CVAE features")
            if cvae_features.shape != (n, self.config.cvae_feature_channels, 8, 8):
                raise ValueError(
                    f"CVAE features must be ({n}, {self.config.cvae_feature_channels}, 8, 8), "
                    f"got {tuple(cvae_features.shape)}"
                )
        elif cvae_features is not None:
            raise ValueError("s2s decoder does not take CVAE features")

        x = _to_volume(reshape_features(enc, self.config.d))
        x = self.res1(x)
        if cvae_features is not None:
            x = torch.cat([x, _to_volume(cvae_features.to(x.dtype))], dim=1)
        x = self.res2(x)
        x = _to_volume(self.upsample(_to_frames(x)))
        x = self.res4(self.res3(x))
        return torch.sigmoid(_to_frames(x))
