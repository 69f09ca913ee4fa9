"""Kernel-guided underwater video enhancement."""

from .model import ModelConfig, UVENet, build_model, load_checkpoint, save_checkpoint
from .ops import ConfigError, ShapeError, pixel_shuffle, pixel_unshuffle
from .training import TrainingConfig, charbonnier, total_loss, train
from .inference import enhance_clip, plan

__all__ = [
    "ConfigError",
    "ModelConfig",
    "ShapeError",
    "TrainingConfig",
    "UVENet",
    "build_model",
    "charbonnier",
    "enhance_clip",
    "load_checkpoint",
    "pixel_shuffle",
    "pixel_unshuffle",
    "plan",
    "save_checkpoint",
    "total_loss",
    "train",
]

__version__ = "0.1.0"
