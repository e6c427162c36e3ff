"""Phoneme-to-rtMRI video synthesis with a transformer encoder and a mixed
2D/3D convolutional decoder, an optional phoneme-conditioned VAE prior, and
segmentation-based dice evaluation."""

__version__ = "0.1.0"

from .corpus import (
    DEFAULT_INVENTORY,
    FRAME_RATE,
    AlignmentRecord,
    ATBMaskSet,
    CorpusError,
    CorpusSplit,
    PhonemeInventory,
    Utterance,
    align_phonemes_to_frames,
    load_utterance,
    make_splits,
    split_utterances,
)
from .cvae import ConditionalVAE, CVAEConfig, LatentPosterior, kl_divergence, reparameterize
from .decoder import DecoderConfig, FrameDecoder, ResBlock3D, reshape_features
from .encoder import EncoderConfig, PhonemeEncoder
from .estimators import ATBSegmenter, PhonemeCVAE, PhonemeVideoSynthesizer
from .evaluation import DiceReport, aggregate_dice, dice, evaluate_model, predict_masks, train_segnet
from .segnet import SegNet, SegNetConfig
from .seq2seq import Seq2SeqModel
from .synthetic import SyntheticConfig, generate_synthetic_corpus
from .training import TrainConfig, TrainReport, synthesize, train_cvae, train_s2s

__all__ = [
    "__version__",
    "DEFAULT_INVENTORY",
    "FRAME_RATE",
    "AlignmentRecord",
    "ATBMaskSet",
    "ATBSegmenter",
    "CorpusError",
    "CorpusSplit",
    "ConditionalVAE",
    "CVAEConfig",
    "DecoderConfig",
    "DiceReport",
    "EncoderConfig",
    "FrameDecoder",
    "LatentPosterior",
    "PhonemeCVAE",
    "PhonemeEncoder",
    "PhonemeInventory",
    "PhonemeVideoSynthesizer",
    "ResBlock3D",
    "SegNet",
    "SegNetConfig",
    "Seq2SeqModel",
    "SyntheticConfig",
    "TrainConfig",
    "TrainReport",
    "Utterance",
    "aggregate_dice",
    "align_phonemes_to_frames",
    "dice",
    "evaluate_model",
    "generate_synthetic_corpus",
    "kl_divergence",
    "load_utterance",
    "make_splits",
    "predict_masks",
    "reparameterize",
    "reshape_features",
    "split_utterances",
    "synthesize",
    "train_cvae",
    "train_s2s",
    "train_segnet",
]
