"""Parameter containers.

A :class:`Module` owns tensors and sub-modules as plain attributes and walks
them in attribute order.  Parameters are created through an initializer:
:class:`Init` allocates seeded arrays, :class:`MetaInit` only records shapes,
so the same constructor serves both training and analytic parameter counting.
"""

from __future__ import annotations

import math
from typing import Iterator, Mapping

import numpy as np

from .tensor import Tensor

__all__ = ["Module", "Init", "MetaInit", "ShapeOnly"]


class ShapeOnly:
    """Placeholder parameter that carries a shape and nothing else."""

    __slots__ = ("shape",)

    def __init__(self, shape: tuple[int, ...]):
        self.shape = tuple(int(s) for s in shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)


class Init:
    def __init__(self, rng: np.random.Generator | int, dtype=np.float32):
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.dtype = np.dtype(dtype)

    def _param(self, data: np.ndarray) -> Tensor:
        return Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)

    def uniform(self, shape, bound: float) -> Tensor:
        return self._param(self.rng.uniform(-bound, bound, size=shape))

    def fan_in(self, shape, fan_in: int) -> Tensor:
        """Zero-mean uniform with bound 1/sqrt(fan_in)."""
        return self.uniform(shape, 1.0 / math.sqrt(max(fan_in, 1)))

    def normal(self, shape, std: float) -> Tensor:
        return self._param(self.rng.normal(0.0, std, size=shape))

    def zeros(self, shape) -> Tensor:
        return self._param(np.zeros(shape))

    def ones(self, shape) -> Tensor:
        return self._param(np.ones(shape))

    def array(self, fn, shape) -> Tensor:
        """Parameter from ``fn(rng)``; used for structured initializations."""
        data = np.asarray(fn(self.rng))
        assert data.shape == tuple(shape), (data.shape, shape)
        return self._param(data)


class MetaInit:
    """Initializer that allocates nothing; every parameter is a `ShapeOnly`."""

    dtype = np.dtype(np.float32)

    def uniform(self, shape, bound=None):
        return ShapeOnly(shape)

    fan_in = normal = uniform

    def zeros(self, shape):
        return ShapeOnly(shape)

    ones = zeros

    def array(self, fn, shape):
        return ShapeOnly(shape)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            path = f"{prefix}{name}"
            if isinstance(value, (Tensor, ShapeOnly)):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None
