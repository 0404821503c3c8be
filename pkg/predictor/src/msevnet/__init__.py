"""Spatiotemporal forecaster for microstructure evolution sequences."""

from .data import load_clips, pad_leading_zeros, rollout_segments
from .model import Forecaster, GSTABlock, ModelConfig, mse_loss
from .predict import forecast, forecast_clips, write_predictions
from .train import load_checkpoint, save_checkpoint, train

__all__ = [
    "Forecaster", "GSTABlock", "ModelConfig", "mse_loss",
    "load_clips", "pad_leading_zeros", "rollout_segments",
    "forecast", "forecast_clips", "write_predictions",
    "load_checkpoint", "save_checkpoint", "train",
]

__version__ = "0.1.0"
