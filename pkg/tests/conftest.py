from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from marginforge.data import Dataset, SparseVector


def dataset_from_arrays(X, y) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    samples = [SparseVector.from_dense(row) for row in X]
    return Dataset(samples, [int(v) for v in y], dim=X.shape[1])


def random_dataset(rng: np.random.Generator, n: int, d: int) -> Dataset:
    X = rng.normal(size=(n, d))
    y = rng.choice([-1, 1], size=n)
    if len(set(y)) < 2:  # force both classes
        y[0] = 1
        y[-1] = -1
    return dataset_from_arrays(X, y)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
