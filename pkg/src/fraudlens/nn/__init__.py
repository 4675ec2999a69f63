"""Minimal tensor network: exact forward/backward passes on numpy arrays.

Tensors are plain numpy ndarrays (row-major, float32 by default; float64 for
verification builds via ModelConfig.dtype).
"""

from .ops import activation, bce_loss, dropout, maxpool2d, xcorr2d
from .model import (
    Model,
    ModelConfig,
    adam_step,
    backward,
    build_model,
    forward,
    forward_from,
)
from .checkpoint import load_model, save_model

__all__ = [
    "Model",
    "ModelConfig",
    "activation",
    "adam_step",
    "backward",
    "bce_loss",
    "build_model",
    "dropout",
    "forward",
    "forward_from",
    "load_model",
    "maxpool2d",
    "save_model",
    "xcorr2d",
]
