"""Hallucination detection from token-entropy sequences.

A single forward pass of a language model yields one Shannon entropy value
per generated token; this package classifies those entropy sequences with
a compact BiLSTM + attention model, provides the full training recipe, and
ships the multi-pass and probe baselines the approach is measured against.
"""

from .entropy import (
    MAX_ENTROPY,
    MAX_SEQUENCE_LEN,
    MAX_TOP_TOKENS,
    EntropySequence,
    build_entropy_sequence,
    compute_token_entropy,
)
from .model import EntropyClassifier, ModelConfig, Prediction, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "MAX_ENTROPY",
    "MAX_SEQUENCE_LEN",
    "MAX_TOP_TOKENS",
    "EntropyClassifier",
    "EntropySequence",
    "ModelConfig",
    "Prediction",
    "build_entropy_sequence",
    "compute_token_entropy",
    "load_model",
    "save_model",
    "__version__",
]
