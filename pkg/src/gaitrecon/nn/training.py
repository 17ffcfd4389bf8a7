from __future__ import annotations

import numpy as np
import torch

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def resolve_dtype(name: str) -> torch.dtype:
    try:
        return DTYPES[name]
    except KeyError:
        raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {name!r}") from None


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class Saturation:
    """Stop once the epoch loss improves by less than ``tol`` (relative) ``patience`` times in a row."""

    def __init__(self, tol: float = 1e-4, patience: int = 5):
        self.tol = tol
        self.patience = patience
        self.best = None
        self.stalled = 0

    def update(self, loss: float) -> bool:
        if self.best is not None and self.best - loss < self.tol * abs(self.best):
            self.stalled += 1
        else:
            self.stalled = 0
        self.best = loss if self.best is None else min(self.best, loss)
        return self.stalled >= self.patience
