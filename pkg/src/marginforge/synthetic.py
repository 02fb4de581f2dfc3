"""Synthetic two-Gaussian benchmark data for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .data import Dataset, SparseVector
from .rng import child_rng


def two_gaussians(n: int, seed: int, separation: float = 3.0, dim: int = 2) -> Dataset:
    """Balanced binary sample: class +/-1 is N(+/-mu, I) with |2 mu| = separation.

    The rows are shuffled so any prefix or split is itself an i.i.d. sample.
    """
    rng = child_rng(seed, 0)
    n_pos = n // 2
    n_neg = n - n_pos
    mu = np.zeros(dim)
    mu[0] = separation / 2.0
    X = np.vstack(
        [
            rng.normal(size=(n_pos, dim)) + mu,
            rng.normal(size=(n_neg, dim)) - mu,
        ]
    )
    y = np.concatenate([np.ones(n_pos, dtype=np.int64), -np.ones(n_neg, dtype=np.int64)])
    order = rng.permutation(n)
    samples = [SparseVector.from_dense(X[i]) for i in order]
    return Dataset(samples, [int(y[i]) for i in order], dim=dim)
