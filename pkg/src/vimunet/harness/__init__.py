"""Synthetic data, training, prediction, evaluation and benchmarking."""

from .bench import BenchReport, BenchRow, Verdict, bench, default_configs
from .data import Dataset, Sample, SyntheticDatasetSpec, generate_dataset, load_dataset
from .evaluate import EvalReport, evaluate
from .losses import PIPELINES, bce_with_logits, dice_loss, mse, segmentation_loss
from .optim import Adam, ReduceLROnPlateau
from .predict import Thresholds, maps_to_instances, predict, predict_maps, select_thresholds
from .train import (
    NumericError,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    make_targets,
    save_checkpoint,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
