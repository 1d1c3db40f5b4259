"""Deterministic synthetic microscopy-like datasets.

Two instance kinds stand in for the two benchmark regimes:

``blobs-small``
    many small convex cells (rotated ellipses) on background, touching but
    never overlapping; each cell gets its own brightness.
``regions-large``
    a handful of large space-filling regions from a seeded Voronoi growth,
    separated by dark one-pixel membranes, like neurites in EM slices.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from ..instseg import connected_components

__all__ = ["SyntheticDatasetSpec", "Sample", "Dataset", "generate_dataset", "load_dataset", "KINDS"]

KINDS = ("blobs-small", "regions-large")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    kind: str = "blobs-small"
    image_size: int = 64
    n_images: int = 200
    instance_count: tuple[int, int] | None = None
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        if self.instance_count is None:
            default = (6, 12) if self.kind == "blobs-small" else (3, 6)
            object.__setattr__(self, "instance_count", default)
        lo, hi = self.instance_count
        object.__setattr__(self, "instance_count", (int(lo), int(hi)))
        if not 1 <= lo <= hi:
            raise ValueError(f"instance_count range {self.instance_count} is invalid")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["instance_count"] = list(self.instance_count)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SyntheticDatasetSpec":
        data = dict(data)
        if "instance_count" in data and data["instance_count"] is not None:
            data["instance_count"] = tuple(data["instance_count"])
        return cls(**data)


@dataclass
class Sample:
    image: np.ndarray  # [1, H, W] float32
    labels: np.ndarray  # [H, W] int32


@dataclass
class Dataset:
    spec: SyntheticDatasetSpec
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]

    def split(self, name: str) -> list[Sample]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]

    def save(self, out_dir: str | Path) -> None:
        from ..instseg import write_pgm
        from ..numerics import save_arrays

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dataset.json").write_text(json.dumps(self.spec.to_dict(), indent=2, sort_keys=True))
        for name in ("train", "val", "test"):
            d = out / name
            d.mkdir(exist_ok=True)
            for i, s in enumerate(self.split(name)):
                save_arrays(d / f"{i:04d}_image.bin", {"image": s.image})
                write_pgm(d / f"{i:04d}_labels.pgm", s.labels)


def load_dataset(root: str | Path) -> Dataset:
    """Read a directory written by :meth:`Dataset.save`."""
    from ..instseg import read_pgm
    from ..numerics import load_arrays

    root = Path(root)
    meta = root / "dataset.json"
    if not meta.exists():
        raise FileNotFoundError(f"{root} has no dataset.json; not a generated dataset")
    spec = SyntheticDatasetSpec.from_dict(json.loads(meta.read_text()))
    splits = {}
    for name in ("train", "val", "test"):
        samples = []
        for img in sorted((root / name).glob("*_image.bin")):
            stem = img.name[: -len("_image.bin")]
            samples.append(Sample(load_arrays(img)[0]["image"], read_pgm(root / name / f"{stem}_labels.pgm")))
        splits[name] = samples
    return Dataset(spec, **splits)


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(theta), math.sin(theta)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def _blobs(spec: SyntheticDatasetSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    n = spec.image_size
    labels = np.zeros((n, n), dtype=np.int32)
    scale = n / 64.0
    placed = 0
    for _ in range(400 * count):
        if placed == count:
            break
        ry = rng.uniform(3.5, 7.0) * scale
        rx = ry * rng.uniform(0.6, 1.0)
        cy, cx = rng.uniform(2, n - 3, size=2)
        mask = _ellipse_mask(n, cy, cx, ry, rx, rng.uniform(0, math.pi))
        # overlap resolution: reject any candidate that covers an existing cell
        if mask.sum() < 12 or (labels[mask] > 0).any():
            continue
        if connected_components(mask).max() != 1:
            continue
        placed += 1
        labels[mask] = placed
    if placed < count:
        raise ValueError(
            f"cannot place {count} non-overlapping cells in a {n}x{n} image; "
            f"lower instance_count or raise image_size")
    return labels


def _regions(spec: SyntheticDatasetSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    n = spec.image_size
    min_sep = 0.6 * n / math.sqrt(count)
    seeds: list[np.ndarray] = []
    for _ in range(2000):
        if len(seeds) == count:
            break
        p = rng.uniform(0, n, size=2)
        if all(np.hypot(*(p - q)) >= min_sep for q in seeds):
            seeds.append(p)
    if len(seeds) < count:
        raise ValueError(f"cannot place {count} well-separated regions in a {n}x{n} image")
    pts = np.array(seeds)
    weights = rng.uniform(0.8, 1.25, size=count)
    yy, xx = np.mgrid[0:n, 0:n]
    d = np.hypot(yy[None] - pts[:, 0, None, None], xx[None] - pts[:, 1, None, None])
    labels = (np.argmin(d * weights[:, None, None], axis=0) + 1).astype(np.int32)
    # a weighted region can split; keep each label's largest piece, give the rest to a neighbour
    out = np.zeros_like(labels)
    nxt = 0
    for lab in range(1, count + 1):
        comps = connected_components(labels == lab)
        if comps.max() == 0:
            continue
        sizes = np.bincount(comps.ravel())[1:]
        nxt += 1
        out[comps == (np.argmax(sizes) + 1)] = nxt
    return _fill_holes_from_neighbours(out)


def _fill_holes_from_neighbours(labels: np.ndarray) -> np.ndarray:
    while (labels == 0).any():
        padded = np.pad(labels, 1)
        for dy, dx in ((-1, 0), (0, -1), (0, 1), (1, 0)):
            nb = padded[1 + dy:1 + dy + labels.shape[0], 1 + dx:1 + dx + labels.shape[1]]
            fill = (labels == 0) & (nb > 0)
            labels = np.where(fill, nb, labels)
    return labels


def _render(spec: SyntheticDatasetSpec, rng: np.random.Generator, labels: np.ndarray) -> np.ndarray:
    n_inst = int(labels.max())
    if spec.kind == "blobs-small":
        levels = np.concatenate([[0.15], rng.uniform(0.45, 0.95, size=n_inst)])
        image = levels[labels]
    else:
        levels = np.concatenate([[0.0], rng.uniform(0.35, 0.9, size=n_inst)])
        image = levels[labels]
        from ..instseg import make_targets_boundary

        membrane = make_targets_boundary(labels)[1] > 0
        image = np.where(membrane, 0.05, image)
    if spec.noise > 0:
        image = image + rng.normal(0.0, spec.noise, size=image.shape)
    return image[None].astype(np.float32)


def generate_dataset(spec: SyntheticDatasetSpec) -> Dataset:
    """Images and labels split 70/15/15 by index."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.instance_count
    samples = []
    for _ in range(spec.n_images):
        count = int(rng.integers(lo, hi + 1))
        labels = _blobs(spec, rng, count) if spec.kind == "blobs-small" else _regions(spec, rng, count)
        samples.append(Sample(_render(spec, rng, labels), labels))
    n_train = int(round(0.7 * spec.n_images))
    n_val = int(round(0.15 * spec.n_images))
    return Dataset(spec, samples[:n_train], samples[n_train:n_train + n_val],
                   samples[n_train + n_val:])
