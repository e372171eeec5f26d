"""Lightweight radiograph-sorting CNN (fire / 313 / reduction / 31C blocks) in numpy."""
from .graph import ModelGraph, backward, build_model, format_summary, forward, predict, summary
from .metrics import ConfusionMatrix, MetricsReport, evaluate, metrics_from_confusion
from .serialize import load_weights, save_weights
from .train import ArrayDataset, History, TrainConfig, train

__all__ = [
    "ArrayDataset", "ConfusionMatrix", "History", "MetricsReport", "ModelGraph", "TrainConfig",
    "backward", "build_model", "evaluate", "format_summary", "forward", "load_weights",
    "metrics_from_confusion", "predict", "save_weights", "summary", "train",
]
__version__ = "0.1.0"
