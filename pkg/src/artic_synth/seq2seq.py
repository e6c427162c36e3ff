"""Phoneme-to-video sequence model: encoder + frame decoder, with an optional
frozen CVAE prior supplying intermediary features for the s2s-v variant."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .cvae import ConditionalVAE
from .decoder import DecoderConfig, FrameDecoder
from .encoder import EncoderConfig, PhonemeEncoder


class Seq2SeqModel(nn.Module):
    def __init__(
        self,
        encoder_config: EncoderConfig,
        decoder_config: DecoderConfig,
        prior: ConditionalVAE | None = None,
    ):
        super().__init__()
        if encoder_config.d_model != decoder_config.d_model:
            raise ValueError(
                f"encoder width {encoder_config.d_model} != decoder d*64 = {decoder_config.d_model}"
            )
        if decoder_config.variant == "s2s-v":
            if prior is None:
                raise ValueError("s2s-v needs a trained CVAE prior")
            if prior.config.feature_channels != decoder_config.cvae_feature_channels:
                raise ValueError("CVAE feature channels do not match the decoder")
            if prior.config.vocab_size != encoder_config.vocab_size:
                raise ValueError("CVAE and encoder phoneme inventories differ")
            for p in prior.parameters():
                p.requires_grad_(False)
        elif prior is not None:
            raise ValueError("s2s variant does not use a CVAE prior")
        self.encoder = PhonemeEncoder(encoder_config)
        self.decoder = FrameDecoder(decoder_config)
        self.prior = prior

    @property
    def variant(self) -> str:
        return self.decoder.config.variant

    def prior_features(self, phoneme_ids, seed: int) -> torch.Tensor | None:
        if self.prior is None:
            return None
        return self.prior.sample_feature_sequence(phoneme_ids, seed)

    def forward(self, phoneme_ids: torch.Tensor, cvae_features: torch.Tensor | None = None, seed: int = 0):
        """(n,) phoneme ids -> (n, 3, 64, 64) frames in [0, 1]."""
        if self.prior is not None and cvae_features is None:
            cvae_features = self.prior_features(phoneme_ids, seed)
        return self.decoder(self.encoder(phoneme_ids), cvae_features)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    @torch.no_grad()
    def synthesize(self, phoneme_ids, seed: int = 0) -> np.ndarray:
        ids = torch.as_tensor(np.asarray(phoneme_ids), dtype=torch.long)
        if ids.ndim != 1 or ids.shape[0] == 0:
            raise ValueError("phoneme sequence must be a non-empty 1-D sequence")
        was_training = self.training
        self.eval()
        out = self(ids, seed=seed)
        self.train(was_training)
        return out.float().numpy()
