"""Training losses for the two target pipelines.

Pipeline ``boundary`` (i): every channel is a probability, each scored with
soft Dice plus binary cross-entropy on logits.  Pipeline ``distance`` (ii):
channel 0 is foreground (Dice + BCE), channels 1 and 2 are distance maps
regressed with mean-squared error on the raw output.  Terms are summed.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..numerics import ShapeError, Tensor

__all__ = ["PIPELINES", "dice_loss", "bce_with_logits", "mse", "segmentation_loss",
           "probability_channels", "out_channels"]

PIPELINES = ("boundary", "distance")
_EPS = 1e-6


def out_channels(pipeline: str) -> int:
    return {"boundary": 2, "distance": 3}[_check_pipeline(pipeline)]


def probability_channels(pipeline: str) -> tuple[int, ...]:
    return {"boundary": (0, 1), "distance": (0,)}[_check_pipeline(pipeline)]


def _check_pipeline(pipeline: str) -> str:
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")
    return pipeline


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean of softplus(x) - x t, the stable form of -t log p - (1-t) log(1-p)."""
    t = nx.as_tensor(target, logits.dtype)
    return nx.mean(nx.softplus(logits) - logits * t)


def dice_loss(logits: Tensor, target) -> Tensor:
    p = nx.sigmoid(logits)
    t = nx.as_tensor(target, logits.dtype)
    inter = nx.sum_(p * t)
    denom = nx.sum_(p * p) + nx.sum_(t * t)
    return 1.0 - (2.0 * inter + _EPS) / (denom + _EPS)


def mse(pred: Tensor, target) -> Tensor:
    diff = pred - nx.as_tensor(target, pred.dtype)
    return nx.mean(diff * diff)


def segmentation_loss(output: Tensor, target, pipeline: str,
                      weights: dict[str, float] | None = None) -> Tensor:
    """``output`` and ``target`` are ``[..., C, H, W]`` with matching shapes."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if tuple(output.shape) != target.shape:
        raise ShapeError(f"loss: prediction {output.shape} vs target {target.shape}")
    n_ch = out_channels(pipeline)
    if output.shape[-3] != n_ch:
        raise ShapeError(f"loss: pipeline {pipeline} needs {n_ch} channels, got {output.shape[-3]}")
    w = {"dice": 1.0, "bce": 1.0, "mse": 1.0, **(weights or {})}
    axis = output.ndim - 3
    total = None
    for c in range(n_ch):
        x = nx.getitem(output, (slice(None),) * axis + (c,))
        t = target[(slice(None),) * axis + (c,)]
        if c in probability_channels(pipeline):
            term = w["dice"] * dice_loss(x, t) + w["bce"] * bce_with_logits(x, t)
        else:
            term = w["mse"] * mse(x, t)
        total = term if total is None else total + term
    return total
