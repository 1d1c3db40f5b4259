"""Desk-scale training loop: Adam, reduce-on-plateau, best-validation checkpoint."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import numerics as nx
from ..instseg import make_targets_boundary, make_targets_distance
from ..models import ModelConfig, SegmentationModel, build_model
from ..numerics import ConfigError, Tensor
from .data import Dataset, Sample, SyntheticDatasetSpec, generate_dataset
from .losses import PIPELINES, out_channels, segmentation_loss
from .optim import Adam, ReduceLROnPlateau

__all__ = ["TrainConfig", "TrainResult", "NumericError", "train", "make_targets",
           "save_checkpoint", "load_checkpoint", "validation_loss"]


class NumericError(RuntimeError):
    """A non-finite loss or parameter appeared during training."""


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    pipeline: str = "boundary"
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    val_every: int = 100
    seed: int = 0
    loss_weights: dict[str, float] = field(default_factory=lambda: {"dice": 1.0, "bce": 1.0,
                                                                    "mse": 1.0})
    augment: bool = True

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}; expected one of {PIPELINES}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.iterations < 1 or self.batch_size < 1 or self.val_every < 1:
            raise ConfigError("iterations, batch_size and val_every must be >= 1")
        if self.model.out_channels != out_channels(self.pipeline):
            raise ConfigError(
                f"pipeline {self.pipeline} needs out_channels={out_channels(self.pipeline)}, "
                f"model has {self.model.out_channels}")
        if self.model.arch != "unet" and self.model.image_size != self.dataset.image_size:
            raise ConfigError(
                f"model image_size {self.model.image_size} != dataset image_size "
                f"{self.dataset.image_size}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["model"] = self.model.to_dict()
        out["dataset"] = self.dataset.to_dict()
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown train config fields: {unknown}")
        if "model" not in data:
            raise ConfigError("train config needs a 'model' section")
        data["model"] = ModelConfig.from_dict(data["model"])
        if "dataset" in data:
            try:
                data["dataset"] = SyntheticDatasetSpec.from_dict(data["dataset"])
            except (TypeError, ValueError) as err:
                raise ConfigError(f"dataset: {err}") from None
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainResult:
    model: SegmentationModel
    config: TrainConfig
    log: list[dict[str, float]]  # one entry per iteration: iteration, loss, lr
    val_log: list[dict[str, float]]  # one entry per validation round
    best_iteration: int
    best_val_loss: float
    peak_tape_bytes: int
    optimizer_state_bytes: int


def make_targets(labels: np.ndarray, pipeline: str) -> np.ndarray:
    if pipeline == "boundary":
        return make_targets_boundary(labels)
    if pipeline == "distance":
        return make_targets_distance(labels)
    raise ValueError(f"unknown pipeline {pipeline!r}")


def _stack(samples: list[Sample], pipeline: str) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    targets = np.stack([make_targets(s.labels, pipeline) for s in samples]).astype(np.float32)
    return images, targets


def _augment(rng: np.random.Generator, x: np.ndarray, y: np.ndarray):
    """Joint random flip + quarter turn; both target kinds are equivariant under these."""
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    x = np.rot90(x, k, axes=(-2, -1))
    y = np.rot90(y, k, axes=(-2, -1))
    if flip:
        x, y = x[..., ::-1], y[..., ::-1]
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def validation_loss(model: SegmentationModel, images: np.ndarray, targets: np.ndarray,
                    pipeline: str, weights: dict[str, float] | None = None,
                    chunk: int = 8) -> float:
    """Mean loss over images, evaluated in chunks without recording."""
    total, n = 0.0, len(images)
    with nx.no_grad():
        for i in range(0, n, chunk):
            out = model(Tensor(images[i:i + chunk]))
            part = segmentation_loss(out, targets[i:i + chunk], pipeline, weights)
            total += float(part.data) * len(images[i:i + chunk])
    return total / n


def train(config: TrainConfig, dataset: Dataset | None = None,
          progress: Callable[[dict[str, float]], None] | None = None) -> TrainResult:
    """Train from scratch; the returned model holds the best-validation weights."""
    dataset = dataset if dataset is not None else generate_dataset(config.dataset)
    if not dataset.train or not dataset.val:
        raise ConfigError("dataset needs non-empty train and val splits")
    rng = np.random.default_rng(config.seed)
    model = build_model(config.model, seed=int(rng.integers(2 ** 63)))
    params = model.parameters()
    opt = Adam(params, config.lr, config.betas, config.eps)
    sched = ReduceLROnPlateau(opt, config.plateau_factor, config.plateau_patience)
    train_x, train_y = _stack(dataset.train, config.pipeline)
    val_x, val_y = _stack(dataset.val, config.pipeline)
    tape = nx.current_tape()
    tape.reset()
    tape.peak_bytes = 0

    log: list[dict[str, float]] = []
    val_log: list[dict[str, float]] = []
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    best_val, best_it = np.inf, 0
    for it in range(1, config.iterations + 1):
        idx = rng.integers(len(train_x), size=config.batch_size)
        x, y = train_x[idx], train_y[idx]
        if config.augment:
            x, y = _augment(rng, x, y)
        out = model(Tensor(x))
        loss = segmentation_loss(out, y, config.pipeline, config.loss_weights)
        value = float(loss.data)
        if not np.isfinite(value):
            tape.reset()
            raise NumericError(f"non-finite training loss {value} at iteration {it}")
        opt.zero_grad()
        nx.backward(loss)
        opt.step()
        entry = {"iteration": it, "loss": value, "lr": opt.lr}
        log.append(entry)
        if progress is not None:
            progress(entry)
        if it % config.val_every == 0 or it == config.iterations:
            v = validation_loss(model, val_x, val_y, config.pipeline, config.loss_weights)
            if not np.isfinite(v):
                raise NumericError(f"non-finite validation loss {v} at iteration {it}")
            if v < best_val:
                best_val, best_it = v, it
                best_state = {k: a.copy() for k, a in model.state_dict().items()}
            sched.step(v)
            val_log.append({"iteration": it, "val_loss": v, "lr": opt.lr})
    model.load_state_dict(best_state)
    return TrainResult(model, config, log, val_log, best_it, float(best_val), tape.peak_bytes,
                       opt.state_bytes())


def save_checkpoint(path: str | Path, model: SegmentationModel, config: TrainConfig,
                    extra: dict[str, str] | None = None) -> None:
    meta = {"train_config": json.dumps(config.to_dict(), sort_keys=True), **(extra or {})}
    nx.save_arrays(path, model.state_dict(), metadata=meta)


def load_checkpoint(path: str | Path) -> tuple[SegmentationModel, TrainConfig, dict[str, str]]:
    arrays, meta = nx.load_arrays(path)
    if "train_config" not in meta:
        raise ConfigError(f"{path}: checkpoint carries no train_config metadata")
    config = TrainConfig.from_dict(json.loads(meta["train_config"]))
    model = build_model(config.model, seed=0)
    model.load_state_dict(arrays)
    return model, config, meta
