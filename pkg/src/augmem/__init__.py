"""Streaming simultaneous speech translation with an augmented-memory encoder."""

from . import backend
from .model_core import BOS, EOS, PAD, ModelConfig, SegmentSpec, WeightSet, init_weights, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "ModelConfig",
    "SegmentSpec",
    "WeightSet",
    "backend",
    "init_weights",
    "load_checkpoint",
    "save_checkpoint",
]
