"""Earthquake magnitude regression from bi-temporal SAR tiles with a margin-ranking term."""

from .losses import composite_loss, margin_ranking_loss, mse_loss
from .model import N_PARAMS, backward, forward, init_params
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "N_PARAMS",
    "TrainConfig",
    "backward",
    "composite_loss",
    "evaluate",
    "forward",
    "init_params",
    "margin_ranking_loss",
    "mse_loss",
    "train",
]
