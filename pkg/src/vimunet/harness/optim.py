"""Adam and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..numerics import Tensor

__all__ = ["Adam", "ReduceLROnPlateau"]


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def state_bytes(self) -> int:
        return sum(a.nbytes for a in self.m) + sum(a.nbytes for a in self.v)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        t = self.step_count
        # fold both bias corrections into the step size
        alpha = self.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
        eps_hat = self.eps * np.sqrt(1.0 - b2 ** t)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (alpha * m / (np.sqrt(v) + eps_hat)).astype(p.data.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m.{i}": a for i, a in enumerate(self.m)}
        out.update({f"v.{i}": a for i, a in enumerate(self.v)})
        out["step"] = np.array([self.step_count], dtype=np.int64)
        return out


class ReduceLROnPlateau:
    """Multiply the lr by ``factor`` once the metric fails to improve for ``patience`` rounds.

    Improvement means dropping below ``best - |best| * threshold``.  After a
    reduction the wait counter restarts, so a flat metric triggers once per
    ``patience`` rounds.
    """

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 10,
                 threshold: float = 1e-4, min_lr: float = 0.0):
        if not 0 < factor < 1:
            raise ValueError(f"plateau factor must lie in (0, 1), got {factor}")
        if patience < 1:
            raise ValueError(f"plateau patience must be >= 1, got {patience}")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.wait = 0
        self.reductions = 0

    def _improved(self, metric: float) -> bool:
        if not np.isfinite(self.best):
            return metric < self.best
        return metric < self.best - abs(self.best) * self.threshold

    def step(self, metric: float) -> bool:
        """Record one validation round; returns True if the lr was reduced."""
        if self._improved(metric):
            self.best = metric
            self.wait = 0
            return False
        self.wait += 1
        if self.wait < self.patience:
            return False
        self.wait = 0
        new_lr = max(self.optimizer.lr * self.factor, self.min_lr)
        reduced = new_lr < self.optimizer.lr
        self.optimizer.lr = new_lr
        self.reductions += reduced
        return reduced
