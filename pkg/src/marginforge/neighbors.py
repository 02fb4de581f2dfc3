"""Exact Euclidean nearest-neighbor queries on raw feature vectors.

All distances are computed in the original input space. Queries are
vectorized linear scans sharing one elementary formula
sqrt(sum((a - b)^2)), so results agree exactly with a direct per-pair
evaluation; distance ties are broken by the smaller point id. Above
DENSE_DIM_LIMIT features the scan falls back to the expanded sparse form
||a||^2 + ||b||^2 - 2 a.b (clamped at zero).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import DENSE_DIM_LIMIT, Dataset, SparseVector, _build_matrix
from .errors import ConfigError


class NeighborIndex:
    """Immutable point set supporting k-th-NN distance and k-NN id queries."""

    def __init__(self, points: Sequence[SparseVector], dim: int | None = None):
        if len(points) < 1:
            raise ConfigError("neighbor index needs at least one point")
        self.points = tuple(points)
        width = max(dim or 0, max(p.max_index() for p in points), 1)
        self.matrix = _build_matrix(self.points, width)
        if sp.issparse(self.matrix):
            self._norms = np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel()
        else:
            self._norms = None

    def __len__(self) -> int:
        return len(self.points)

    def distances_from(self, j: int) -> np.ndarray:
        """Distances from point j to every point (including itself)."""
        return _distances(self.matrix, self._norms, self.matrix[j])

    def kth_nn_distance(self, j: int, k: int) -> float:
        """Distance from point j to its k-th nearest other point."""
        n = len(self.points)
        if not 0 <= j < n:
            raise ConfigError(f"point id {j} out of range")
        if not 1 <= k <= n - 1:
            raise ConfigError(f"k={k} out of range for {n} points")
        d = self.distances_from(j)
        ids = np.arange(n)
        keep = ids != j
        order = np.argsort(d[keep], kind="stable")  # stable: ties resolve to the smaller id
        return float(d[keep][order[k - 1]])

    def k_nearest(self, j: int, k: int) -> list[int]:
        """Ids of the k nearest other points, nearest first."""
        n = len(self.points)
        if not 1 <= k <= n - 1:
            raise ConfigError(f"k={k} out of range for {n} points")
        d = self.distances_from(j)
        ids = np.arange(n)
        keep = ids != j
        order = np.argsort(d[keep], kind="stable")
        return [int(i) for i in ids[keep][order[:k]]]


def _distances(M, norms, center_row) -> np.ndarray:
    if sp.issparse(M):
        c = center_row if sp.issparse(center_row) else sp.csr_matrix(center_row)
        cross = np.asarray((M @ c.T).todense()).ravel()
        c_norm = float(c.multiply(c).sum())
        d2 = norms + c_norm - 2.0 * cross
        np.maximum(d2, 0.0, out=d2)
        return np.sqrt(d2)
    diff = M - np.asarray(center_row).ravel()[None, :]
    return np.sqrt(np.sum(diff * diff, axis=1))


def kth_nn_distance(index: NeighborIndex, j: int, k: int) -> float:
    return index.kth_nn_distance(j, k)


def median_radius(radii: Sequence[float]) -> float:
    """Median with the even-count convention: mean of the two middle values."""
    if len(radii) == 0:
        raise ConfigError("median of an empty radius list")
    arr = np.asarray(radii, dtype=np.float64)
    if np.any(arr < 0):
        raise ConfigError("radii must be non-negative")
    return float(np.median(arr))


def points_in_ball(
    dataset: Dataset,
    exclude: Sequence[int] | set[int],
    center: SparseVector,
    radius: float,
) -> list[int]:
    """Ascending ids i with ||X_i - center|| <= radius and i not excluded."""
    if radius <= 0:
        raise ConfigError(f"ball radius must be positive, got {radius}")
    M = dataset.matrix()
    width = M.shape[1]
    if center.max_index() > width:
        # query point outside the dataset's feature space: pad columns
        if sp.issparse(M):
            M = sp.hstack([M, sp.csr_matrix((M.shape[0], center.max_index() - width))]).tocsr()
        else:
            M = np.hstack([M, np.zeros((M.shape[0], center.max_index() - width))])
        width = center.max_index()
    if sp.issparse(M):
        norms = dataset.row_norms_sq()
        entries = center.entries
        c = sp.csr_matrix(
            (
                np.asarray([v for _, v in entries]),
                (np.zeros(len(entries), dtype=np.int64), np.asarray([i - 1 for i, _ in entries], dtype=np.int64)),
            ),
            shape=(1, width),
        )
        d = _distances(M, norms, c)
    else:
        d = _distances(M, None, center.to_dense(width))
    inside = d <= radius
    if exclude:
        inside[np.asarray(sorted(exclude), dtype=np.int64)] = False
    return [int(i) for i in np.flatnonzero(inside)]
