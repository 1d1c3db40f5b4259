"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, mul, sum_

__all__ = ["numerical_grad", "relative_error", "check_gradients"]


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d x by central differences; ``fn`` must return a scalar.

    ``x.data`` is perturbed in place and restored.
    """
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = fn().item()
        flat[i] = orig - step
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| relative to the tensor's gradient scale max(|a|, |n|)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
                    seed: int = 0) -> dict[int, float]:
    """Relative error per input of ``sum(fn() * R)`` for a fixed random ``R``.

    Returns ``{index: error}``; use ``max(result.values())`` for the worst case.
    """
    inputs = list(inputs)
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    probe = fn()
    proj = Tensor(np.random.default_rng(seed).normal(size=probe.shape).astype(probe.dtype))

    def scalar() -> Tensor:
        return sum_(mul(fn(), proj))

    backward(scalar())
    errors = {}
    for i, x in enumerate(inputs):
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        errors[i] = relative_error(analytic, numerical_grad(scalar, x, step))
    return errors
