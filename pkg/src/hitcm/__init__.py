"""Hierarchical transformer (character and word level, fused multi-head and
outer-product attention) for code-mixed text: classification, tagging and
translation, written on a small numpy autodiff core."""

from .checkpoint import load_checkpoint, save_checkpoint, transfer_load
from .data import Example, SyntheticSpec, TfIdfExtractor, Vocabs, generate_synthetic, make_batches, vocabs_for
from .model import HitModel, HitModelConfig
from .training import TaskData, TrainConfig, evaluate_model, train

__version__ = "0.1.0"

__all__ = [
    "Example", "HitModel", "HitModelConfig", "SyntheticSpec", "TaskData", "TfIdfExtractor", "TrainConfig",
    "Vocabs", "evaluate_model", "generate_synthetic", "load_checkpoint", "make_batches", "save_checkpoint",
    "train", "transfer_load", "vocabs_for",
]
