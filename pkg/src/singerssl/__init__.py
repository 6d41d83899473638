"""Self-supervised singer embeddings with numpy: features, augmentation, losses,
a small convolutional encoder trained by hand-written backprop, and
verification / identification metrics."""

from .dsp import AudioClip, MelSpectrogram, log_mel, stft
from .losses import LossConfig, Variant, compose_loss
from .metrics import EmbeddingTable, eer, mnr, probe_cross_validate
from .model import EncoderSpec
from .pairs import DatasetManifest, epoch_batches, trim_silence
from .train import Checkpoint, TrainConfig, embed_clips, train_loop

__version__ = "0.1.0"

__all__ = [
    "AudioClip", "MelSpectrogram", "log_mel", "stft",
    "LossConfig", "Variant", "compose_loss",
    "EmbeddingTable", "eer", "mnr", "probe_cross_validate",
    "EncoderSpec",
    "DatasetManifest", "epoch_batches", "trim_silence",
    "Checkpoint", "TrainConfig", "embed_clips", "train_loop",
]
