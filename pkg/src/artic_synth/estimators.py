"""scikit-learn style estimators over the models and training loops.

All hyperparameters are constructor arguments (so ``get_params`` /
``set_params`` / ``clone`` work) and fitted state lives in trailing-underscore
attributes.
"""

from __future__ import annotations

import copy

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import DEFAULT_INVENTORY, ATBMaskSet, Utterance
from .cvae import CVAEConfig, ConditionalVAE
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import fit_segnet, mask_set_dice, predict_masks
from .segnet import SegNet, SegNetConfig
from .training import TrainConfig, fit_cvae, train_s2s
from .validation import check_frames, check_masks, check_phoneme_ids, check_sequence_pairs


def _as_utterances(ids_list, videos, prefix: str) -> list[Utterance]:
    return [
        Utterance(utt_id=f"{prefix}{i:05d}", subject_id="", phoneme_ids=a, video=v)
        for i, (a, v) in enumerate(zip(ids_list, videos))
    ]


class PhonemeCVAE(BaseEstimator):
    """Phoneme-conditioned VAE over single frames.

    ``fit(X, y)`` takes frames ``X`` of shape (N, 3, 64, 64) and their
    phoneme ids ``y``; ``sample_features`` returns the decoder's 8x8
    intermediary maps for a phoneme sequence.
    """

    def __init__(
        self,
        vocab_size: int = len(DEFAULT_INVENTORY),
        latent_dim: int = 64,
        feature_channels: int = 32,
        beta: float = 1.0,
        epochs: int = 5,
        batch_size: int = 64,
        learning_rate: float = 1e-3,
        seed: int = 0,
    ):
        self.vocab_size = vocab_size
        self.latent_dim = latent_dim
        self.feature_channels = feature_channels
        self.beta = beta
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _config(self) -> CVAEConfig:
        c = self.feature_channels
        return CVAEConfig(
            vocab_size=self.vocab_size,
            latent_dim=self.latent_dim,
            decoder_channels=(64, c, 32, 16, 16),
            feature_channels=c,
            beta=self.beta,
        )

    def fit(self, X, y):
        frames = check_frames(X)
        ids = check_phoneme_ids(y, self.vocab_size)
        if len(ids) != len(frames):
            raise ValueError(f"{len(ids)} labels for {len(frames)} frames")
        cfg = TrainConfig(
            cvae_epochs=self.epochs,
            cvae_batch_size=self.batch_size,
            cvae_learning_rate=self.learning_rate,
            seed=self.seed,
        )
        self.model_, self.report_ = fit_cvae(frames, ids, self._config(), cfg)
        return self

    @classmethod
    def from_model(cls, model: ConditionalVAE) -> "PhonemeCVAE":
        c = model.config
        est = cls(vocab_size=c.vocab_size, latent_dim=c.latent_dim, feature_channels=c.feature_channels, beta=c.beta)
        est.model_ = model
        return est

    def sample_features(self, phoneme_ids, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "model_")
        ids = check_phoneme_ids(phoneme_ids, self.vocab_size)
        return self.model_.sample_feature_sequence(ids, seed).numpy()

    def sample_frames(self, phoneme_ids, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "model_")
        ids = check_phoneme_ids(phoneme_ids, self.vocab_size)
        return self.model_.sample_frames(ids, seed).numpy()

    def score(self, X, y) -> float:
        """Negative mean ELBO loss (higher is better), with zero noise."""
        check_is_fitted(self, "model_")
        frames = torch.from_numpy(check_frames(X))
        ids = torch.from_numpy(check_phoneme_ids(y, self.vocab_size))
        with torch.no_grad():
            loss, _, _ = self.model_.loss(frames, ids, torch.zeros(len(ids), self.latent_dim))
        return -float(loss)


class PhonemeVideoSynthesizer(BaseEstimator):
    """Transformer-encoder / convolutional-decoder model from frame-aligned
    phoneme ids to (n, 3, 64, 64) videos.

    ``X`` is a list of 1-D phoneme-id arrays, ``y`` a list of matching videos.
    With ``variant="s2s-v"`` a fitted :class:`PhonemeCVAE` must be passed as
    ``cvae``; its intermediary features are injected into the decoder.
    """

    def __init__(
        self,
        variant: str = "s2s",
        vocab_size: int = len(DEFAULT_INVENTORY),
        n_layers: int = 12,
        d_model: int = 512,
        n_heads: int = 8,
        ff_dim: int = 2048,
        dropout: float = 0.1,
        res_channels: tuple = (64, 64, 16),
        up_channels: tuple = (32, 16),
        cvae: PhonemeCVAE | None = None,
        learning_rate: float = 1e-4,
        max_epochs: int = 200,
        patience: int = 10,
        grad_clip: float | None = 1.0,
        seed: int = 0,
    ):
        self.variant = variant
        self.vocab_size = vocab_size
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.res_channels = res_channels
        self.up_channels = up_channels
        self.cvae = cvae
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.patience = patience
        self.grad_clip = grad_clip
        self.seed = seed

    def _configs(self):
        enc = EncoderConfig(
            vocab_size=self.vocab_size,
            n_layers=self.n_layers,
            d_model=self.d_model,
            n_heads=self.n_heads,
            ff_dim=self.ff_dim,
            dropout=self.dropout,
        )
        c_f = self.cvae.feature_channels if self.cvae is not None else 32
        dec = DecoderConfig(
            d=self.d_model // 64,
            res_channels=tuple(self.res_channels),
            up_channels=tuple(self.up_channels),
            cvae_feature_channels=c_f,
            variant=self.variant,
        )
        train = TrainConfig(
            learning_rate=self.learning_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            grad_clip=self.grad_clip,
            seed=self.seed,
        )
        return enc, dec, train

    def fit(self, X, y, X_val=None, y_val=None):
        ids, videos = check_sequence_pairs(X, y, self.vocab_size)
        val = []
        if X_val is not None:
            val = _as_utterances(*check_sequence_pairs(X_val, y_val, self.vocab_size), prefix="val")
        prior = None
        if self.variant == "s2s-v":
            if self.cvae is None:
                raise ValueError("variant 's2s-v' requires a fitted cvae")
            check_is_fitted(self.cvae, "model_")
            prior = copy.deepcopy(self.cvae.model_)
        enc, dec, train = self._configs()
        self.model_, self.report_ = train_s2s(
            _as_utterances(ids, videos, prefix="train"), val, enc, dec, train, prior
        )
        return self

    def predict(self, X, seed: int = 0) -> list[np.ndarray]:
        check_is_fitted(self, "model_")
        return [self.model_.synthesize(check_phoneme_ids(x, self.vocab_size), seed) for x in X]

    def score(self, X, y, seed: int = 0) -> float:
        """Negative mean per-sequence MSE."""
        preds = self.predict(X, seed)
        return -float(np.mean([np.mean((p - check_frames(v)) ** 2) for p, v in zip(preds, y)]))


class ATBSegmenter(BaseEstimator):
    """Three-head SegNet from frames (N, 3, 64, 64) to masks (N, 3, 64, 64).

    With ``warm_start=True`` a second ``fit`` continues from the current
    weights, which is how a pooled model is fine-tuned to one subject.
    """

    def __init__(
        self,
        channels: tuple = (16, 32, 64, 64),
        epochs: int = 10,
        learning_rate: float = 3e-3,
        batch_size: int = 16,
        warm_start: bool = False,
        seed: int = 0,
    ):
        self.channels = channels
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.warm_start = warm_start
        self.seed = seed

    def fit(self, X, y):
        frames = check_frames(X)
        masks = check_masks(y, len(frames))
        if not (self.warm_start and hasattr(self, "model_")):
            torch.manual_seed(self.seed)
            self.model_ = SegNet(SegNetConfig(channels=tuple(self.channels)))
        self.loss_history_ = fit_segnet(
            self.model_, frames, masks, self.epochs, self.learning_rate, self.batch_size, self.seed
        )
        return self

    def predict_masks(self, X) -> ATBMaskSet:
        check_is_fitted(self, "model_")
        return predict_masks(self.model_, check_frames(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_masks(X).stack()

    def score(self, X, y) -> float:
        """Mean per-frame dice over the three masks."""
        pred = self.predict_masks(X)
        ref = ATBMaskSet.from_stack(check_masks(y, len(pred)))
        return float(mask_set_dice(ref, pred).mean())
