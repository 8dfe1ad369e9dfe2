"""Weakly-supervised temporal action localization with learned segment graphs."""

__version__ = "0.1.0"

from .errors import GraphLocError
from .model import DStrategy, ModelConfig, ModelParams, count_params, forward, init_params
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "DStrategy", "GraphLocError", "ModelConfig", "ModelParams", "TrainConfig", "count_params", "forward",
    "init_params", "load_checkpoint", "save_checkpoint", "train",
]
