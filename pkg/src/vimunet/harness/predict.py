"""Model outputs to instance label images."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numerics as nx
from ..instseg import (
    BOUNDARY_SEED_THRESHOLD,
    DISTANCE_SEED_THRESHOLD,
    FG_THRESHOLD,
    MIN_SIZE,
    watershed_from_boundary,
    watershed_from_distance,
)
from ..metrics import dataset_msa
from ..models import SegmentationModel
from ..numerics import ShapeError, Tensor
from .losses import out_channels, probability_channels

__all__ = ["Thresholds", "predict", "predict_maps", "maps_to_instances", "select_thresholds",
           "SEED_GRID"]

SEED_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class Thresholds:
    foreground: float = FG_THRESHOLD
    seed: float | None = None  # None: the pipeline's default
    min_size: int = MIN_SIZE

    def seed_for(self, pipeline: str) -> float:
        if self.seed is not None:
            return self.seed
        return BOUNDARY_SEED_THRESHOLD if pipeline == "boundary" else DISTANCE_SEED_THRESHOLD

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def predict_maps(model: SegmentationModel, images: np.ndarray, pipeline: str,
                 chunk: int = 8) -> np.ndarray:
    """``[N, C_in, H, W]`` images -> ``[N, C_out, H, W]`` maps.

    Probability channels go through a sigmoid, distance channels are used as is.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    n_ch = out_channels(pipeline)
    if model.config.out_channels != n_ch:
        raise ShapeError(
            f"{model.config.name} predicts {model.config.out_channels} channels; "
            f"pipeline {pipeline} needs {n_ch}")
    outs = []
    with nx.no_grad():
        for i in range(0, len(images), chunk):
            outs.append(model(Tensor(images[i:i + chunk])).data)
    maps = np.concatenate(outs).astype(np.float64)
    for c in probability_channels(pipeline):
        maps[:, c] = 1.0 / (1.0 + np.exp(-maps[:, c]))
    return maps


def maps_to_instances(maps: np.ndarray, pipeline: str,
                      thresholds: Thresholds = Thresholds()) -> list[np.ndarray]:
    seed = thresholds.seed_for(pipeline)
    if pipeline == "boundary":
        return [watershed_from_boundary(m[0], m[1], thresholds.foreground, seed,
                                        thresholds.min_size) for m in maps]
    return [watershed_from_distance(m[0], m[1], m[2], thresholds.foreground, seed,
                                    thresholds.min_size) for m in maps]


def predict(model: SegmentationModel, images: np.ndarray, pipeline: str,
            thresholds: Thresholds = Thresholds()) -> list[np.ndarray]:
    """Instance label images, one per input image, same spatial shape as the input."""
    return maps_to_instances(predict_maps(model, images, pipeline), pipeline, thresholds)


def select_thresholds(model: SegmentationModel, images: np.ndarray, labels: Sequence[np.ndarray],
                      pipeline: str, seed_grid: Sequence[float] = SEED_GRID,
                      foreground: float = FG_THRESHOLD,
                      min_size: int = MIN_SIZE) -> tuple[Thresholds, float]:
    """Seed threshold with the best mSA on held-out images (meant for the val split).

    Ties keep the smallest threshold in ``seed_grid``.  Returns the thresholds
    and the mSA they reach.
    """
    if len(images) == 0:
        raise ValueError("threshold selection needs at least one image")
    maps = predict_maps(model, images, pipeline)
    best, best_score = None, -1.0
    for seed in seed_grid:
        th = Thresholds(foreground, float(seed), min_size)
        score = dataset_msa(maps_to_instances(maps, pipeline, th), labels)
        if score > best_score:
            best, best_score = th, score
    return best, best_score
