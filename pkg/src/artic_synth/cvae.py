"""Phoneme-conditioned convolutional VAE over single frames.

The decoder's third layer (an 8x8 activation with ``feature_channels``
channels) is exposed as an intermediary feature map for the s2s-v decoder.
Decoder layers, in order: (1) linear projection of [z, one-hot] to 4x4 maps,
(2) 4x4 convolution, (3) upsample to 8x8 (the tapped layer), then 16x16,
32x32 and 64x64 upsampling with a sigmoid output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class CVAEConfig:
    vocab_size: int
    latent_dim: int = 64
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    decoder_channels: tuple[int, ...] = (64, 32, 32, 16, 16)
    feature_channels: int = 32
    beta: float = 1.0

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        self.decoder_channels = tuple(self.decoder_channels)
        if len(self.encoder_channels) != 4:
            raise ValueError("encoder needs 4 stride-2 stages (64 -> 4)")
        if len(self.decoder_channels) != 5:
            raise ValueError("decoder needs channels for 4x4, 8x8, 16x16, 32x32, 64x64")
        if self.decoder_channels[1] != self.feature_channels:
            raise ValueError("decoder 8x8 stage width must equal feature_channels")

    @property
    def tap_layer(self) -> int:
        return 3

    def to_dict(self) -> dict:
        out = asdict(self)
        out["encoder_channels"] = list(out["encoder_channels"])
        out["decoder_channels"] = list(out["decoder_channels"])
        return out


@dataclass
class LatentPosterior:
    mean: torch.Tensor
    logvar: torch.Tensor

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)


def reparameterize(post: LatentPosterior, noise: torch.Tensor) -> torch.Tensor:
    return post.mean + torch.exp(0.5 * post.logvar) * noise


def kl_divergence(post: LatentPosterior) -> torch.Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over latent dims, per sample."""
    return -0.5 * torch.sum(1.0 + post.logvar - post.mean.pow(2) - post.logvar.exp(), dim=-1)


def _up(in_c: int, out_c: int) -> nn.Sequential:
    return nn.Sequential(nn.ConvTranspose2d(in_c, out_c, 4, stride=2, padding=1), nn.LeakyReLU(0.2))


class ConditionalVAE(nn.Module):
    def __init__(self, config: CVAEConfig):
        super().__init__()
        self.config = config
        layers, c = [], 3
        for out_c in config.encoder_channels:
            layers += [nn.Conv2d(c, out_c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c = out_c
        self.encoder = nn.Sequential(*layers, nn.Flatten())
        flat = c * 4 * 4
        self.to_posterior = nn.Linear(flat + config.vocab_size, 2 * config.latent_dim)

        c4, c8, c16, c32, c64 = config.decoder_channels
        self.project = nn.Linear(config.latent_dim + config.vocab_size, c4 * 16)
        self.refine = nn.Sequential(nn.Conv2d(c4, c4, 3, padding=1), nn.LeakyReLU(0.2))
        self.up8 = _up(c4, c8)
        self.up16 = _up(c8, c16)
        self.up32 = _up(c16, c32)
        self.up64 = nn.ConvTranspose2d(c32, 3, 4, stride=2, padding=1)

    def one_hot(self, phoneme_ids: torch.Tensor) -> torch.Tensor:
        ids = torch.as_tensor(phoneme_ids, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"phoneme id out of range [0, {self.config.vocab_size})")
        return F.one_hot(ids, self.config.vocab_size).to(self.project.weight.dtype)

    def encode(self, frames: torch.Tensor, phoneme_ids: torch.Tensor) -> LatentPosterior:
        """frames: (b, 3, 64, 64) in [0, 1]; phoneme_ids: (b,)."""
        h = torch.cat([self.encoder(frames), self.one_hot(phoneme_ids)], dim=-1)
        mean, logvar = self.to_posterior(h).chunk(2, dim=-1)
        return LatentPosterior(mean, logvar)

    def decode(self, z: torch.Tensor, phoneme_ids: torch.Tensor):
        """Returns (frames (b, 3, 64, 64), tapped features (b, c_F, 8, 8))."""
        h = torch.cat([z, self.one_hot(phoneme_ids)], dim=-1)
        h = self.project(h).view(z.shape[0], self.config.decoder_channels[0], 4, 4)
        h = self.refine(F.leaky_relu(h, 0.2))
        feat = self.up8(h)
        x = self.up64(self.up32(self.up16(feat)))
        return torch.sigmoid(x), feat

    def forward(self, frames: torch.Tensor, phoneme_ids: torch.Tensor, noise: torch.Tensor | None = None):
        post = self.encode(frames, phoneme_ids)
        if noise is None:
            noise = torch.randn_like(post.mean)
        recon, _ = self.decode(reparameterize(post, noise), phoneme_ids)
        return recon, post

    def loss(self, frames: torch.Tensor, phoneme_ids: torch.Tensor, noise: torch.Tensor | None = None):
        """MSE reconstruction (mean over pixels) + beta * KL (mean over batch).

        Returns (total, mse, kl).
        """
        recon, post = self(frames, phoneme_ids, noise)
        mse = F.mse_loss(recon, frames)
        kl = kl_divergence(post).mean()
        return mse + self.config.beta * kl, mse, kl

    @torch.no_grad()
    def sample_feature_sequence(self, phoneme_ids, seed: int = 0) -> torch.Tensor:
        """Intermediary features (n, c_F, 8, 8) for a phoneme-id sequence, one
        prior draw z ~ N(0, I) per frame from a generator seeded with ``seed``."""
        ids = torch.as_tensor(np.asarray(phoneme_ids), dtype=torch.long)
        gen = torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
        z = torch.randn(ids.shape[0], self.config.latent_dim, generator=gen)
        was_training = self.training
        self.eval()
        _, feat = self.decode(z.to(self.project.weight.dtype), ids)
        self.train(was_training)
        return feat

    @torch.no_grad()
    def sample_frames(self, phoneme_ids, seed: int = 0) -> torch.Tensor:
        ids = torch.as_tensor(np.asarray(phoneme_ids), dtype=torch.long)
        gen = torch.Generator().manual_seed(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
        z = torch.randn(ids.shape[0], self.config.latent_dim, generator=gen)
        frames, _ = self.decode(z.to(self.project.weight.dtype), ids)
        return frames
