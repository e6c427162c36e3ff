"""Transformer phoneme encoder: learnable embedding, sinusoidal positions and
a stack of pre-norm self-attention blocks producing one D-vector per frame."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn


@dataclass
class EncoderConfig:
    vocab_size: int
    n_layers: int = 12
    d_model: int = 512
    n_heads: int = 8
    ff_dim: int = 2048
    dropout: float = 0.1
    max_len: int = 4096

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 64:
            raise ValueError(f"d_model={self.d_model} not divisible by 64 (D = d*8*8)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64, device=device)[:, None]
    freq = torch.exp(
        torch.arange(0, dim, 2, dtype=torch.float64, device=device) * (-math.log(10000.0) / dim)
    )
    pe = torch.zeros(n, dim, dtype=torch.float64, device=device)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)
    return pe.to(dtype)


class SelfAttention(nn.Module):
    """Multi-head scaled dot-product self-attention without masking."""

    def __init__(self, d_model: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _heads(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        """x: (batch, n, D). Attention has shape (batch, heads, n, n)."""
        b, n, d = x.shape
        q, k, v = self._heads(self.query(x)), self._heads(self.key(x)), self._heads(self.value(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = scores.softmax(dim=-1)
        y = self.dropout(attn) @ v
        y = self.out(y.transpose(1, 2).reshape(b, n, d))
        if return_attention:
            return y, attn
        return y


class TransformerBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, ff_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_dim, d_model),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        h, attn = self.attn(self.norm1(x), return_attention=True)
        x = x + self.drop(h)
        x = x + self.drop(self.ff(self.norm2(x)))
        return (x, attn) if return_attention else x


class PhonemeEncoder(nn.Module):
    """Maps phoneme ids of shape (n,) or (batch, n) to features (..., n, D)."""

    def __init__(self, config: EncoderConfig, use_positional_encoding: bool = True):
        super().__init__()
        self.config = config
        self.use_positional_encoding = use_positional_encoding
        self.embedding = nn.Embedding(config.vocab_size, config.d_model)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.d_model, config.n_heads, config.ff_dim, config.dropout)
            for _ in range(config.n_layers)
        )
        self.norm = nn.LayerNorm(config.d_model)

    def _check_ids(self, ids: torch.Tensor) -> None:
        if ids.dtype not in (torch.int64, torch.int32):
            raise TypeError(f"phoneme ids must be integer, got {ids.dtype}")
        if ids.shape[-1] < 1:
            raise ValueError("phoneme sequence is empty")
        if ids.shape[-1] > self.config.max_len:
            raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {self.config.max_len}")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError(
                f"phoneme id out of range [0, {self.config.vocab_size}): "
                f"min={int(ids.min())}, max={int(ids.max())}"
            )

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        self._check_ids(ids)
        x = self.embedding(ids)
        if self.use_positional_encoding:
            x = x + sinusoidal_positions(ids.shape[-1], self.config.d_model, x.dtype, x.device)
        return x

    def forward(self, ids: torch.Tensor, return_attention: bool = False):
        unbatched = ids.dim() == 1
        if unbatched:
            ids = ids[None]
        x = self.drop(self.embed(ids))
        attns = []
        for block in self.blocks:
            x, attn = block(x, return_attention=True)
            attns.append(attn)
        x = self.norm(x)
        if unbatched:
            x = x[0]
            attns = [a[0] for a in attns]
        return (x, attns) if return_attention else x

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        return self(ids)
