"""Shared test helpers."""

import numpy as np

from vimunet import numerics as nx


def t64(rng, *shape, scale=1.0):
    return nx.Tensor(rng.normal(size=shape) * scale, dtype=np.float64)


def randomize(module, rng, scale=0.5):
    """Replace every parameter with random f64 values so gradients are not tiny."""
    for _, p in module.named_parameters():
        p.data = (p.data.astype(np.float64)
                  + rng.normal(size=p.shape) * scale).astype(np.float64)
    return module
