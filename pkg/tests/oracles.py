"""Independent reference implementations used only by the test suite.

The QP oracle optimizes the dual by exhaustive pairwise coordinate ascent
over a dense Gram matrix (parametrized along the feasibility-preserving
direction, no working-set selection, no caching); the neighbor oracles are
direct per-pair O(n^2) evaluations.
"""

from __future__ import annotations

import math

import numpy as np


def reference_dual_solve(K: np.ndarray, y: np.ndarray, box: float, tol: float = 1e-10, max_sweeps: int = 20000):
    """Maximize sum(a) - 1/2 a'(yy'*K)a over the box/equality feasible set.

    Every ordered pair (i, j) is optimized in closed form along the
    direction e_i*y_i - e_j*y_j (which keeps sum(y*a) = 0); sweeps repeat
    until the objective gain of a full sweep falls below tol.
    """
    n = y.size
    alpha = np.zeros(n)
    Q = np.outer(y, y) * K

    def objective(a: np.ndarray) -> float:
        return float(a.sum() - 0.5 * a @ Q @ a)

    grad = np.ones(n)  # gradient of the dual objective at alpha = 0
    for _ in range(max_sweeps):
        gain = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                g0 = y[i] * grad[i] - y[j] * grad[j]
                if g0 == 0.0:
                    continue
                curv = K[i, i] - 2.0 * K[i, j] + K[j, j]
                # feasible t-range: alpha_i + y_i t and alpha_j - y_j t stay in the box
                if y[i] > 0:
                    t_lo, t_hi = -alpha[i], box - alpha[i]
                else:
                    t_lo, t_hi = alpha[i] - box, alpha[i]
                if y[j] > 0:
                    t_lo = max(t_lo, alpha[j] - box)
                    t_hi = min(t_hi, alpha[j])
                else:
                    t_lo = max(t_lo, -alpha[j])
                    t_hi = min(t_hi, box - alpha[j])
                if curv > 0:
                    t = min(max(g0 / curv, t_lo), t_hi)
                else:
                    t = t_hi if g0 > 0 else t_lo
                if t == 0.0:
                    continue
                gain += g0 * t - 0.5 * curv * t * t
                alpha[i] += y[i] * t
                alpha[j] -= y[j] * t
                grad -= t * (Q[:, i] * y[i] - Q[:, j] * y[j])
        if gain < tol:
            break
    return alpha, objective(alpha)


def reference_gram(kernel_fn, points, shift: float = 0.0) -> np.ndarray:
    """Dense Gram matrix via per-pair evaluations, diagonal shift included."""
    n = len(points)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = kernel_fn(points[i], points[j])
        K[i, i] += shift
    return K


def bf_distances(X: np.ndarray, j: int) -> np.ndarray:
    """Per-pair Euclidean distances from row j, one pair at a time."""
    return np.asarray([np.sqrt(np.sum((X[t] - X[j]) ** 2)) for t in range(X.shape[0])])


def bf_kth_nn_distance(X: np.ndarray, j: int, k: int) -> float:
    """k-th smallest distance to another row, ties by smaller id."""
    d = bf_distances(X, j)
    others = sorted((float(d[t]), t) for t in range(X.shape[0]) if t != j)
    return others[k - 1][0]


def bf_ball(X: np.ndarray, exclude: set[int], center: np.ndarray, r: float) -> list[int]:
    out = []
    for t in range(X.shape[0]):
        if t in exclude:
            continue
        if np.sqrt(np.sum((X[t] - center) ** 2)) <= r:
            out.append(t)
    return out
