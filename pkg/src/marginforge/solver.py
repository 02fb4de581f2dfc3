"""Sequential minimal optimization for the soft-margin SVM dual.

Maximizes sum(alpha) - 1/2 sum_ij y_i y_j alpha_i alpha_j K(x_i, x_j)
subject to sum(y_i alpha_i) = 0 and 0 <= alpha_i <= C. Under the L2
formulation the upper bound disappears and the kernel diagonal gains
1/(2C). Pairs are chosen by the first-order maximal-violating rule with
index-order tie-breaking, so a solve is fully deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .data import Dataset, SparseVector
from .errors import ConfigError, MarginforgeError
from .kernels import Formulation, KernelSpec, RowCache, diagonal_shift, kernel_block

_STALL_LIMIT = 3  # consecutive zero-progress pair updates before giving up

try:  # fused hot-loop kernels; numpy fallbacks below keep the solver usable
    from numba import njit

    @njit(cache=True)
    def _select_pair(score, up, low):  # pragma: no cover - jitted
        n = score.shape[0]
        i = -1
        j = -1
        best_up = -math.inf
        best_low = math.inf
        for t in range(n):
            s = score[t]
            if up[t] and s > best_up:
                best_up = s
                i = t
            if low[t] and s < best_low:
                best_low = s
                j = t
        return i, j, best_up - best_low

    @njit(cache=True)
    def _apply_update(score, row_i, row_j, ci, cj):  # pragma: no cover - jitted
        for t in range(score.shape[0]):
            score[t] -= ci * row_i[t] + cj * row_j[t]

except ImportError:  # pragma: no cover - exercised only without numba

    def _select_pair(score, up, low):
        i = j = -1
        best_up = -math.inf
        best_low = math.inf
        if up.any():
            masked = np.where(up, score, -math.inf)
            i = int(np.argmax(masked))
            best_up = masked[i]
        if low.any():
            masked = np.where(low, score, math.inf)
            j = int(np.argmin(masked))
            best_low = masked[j]
        return i, j, best_up - best_low

    def _apply_update(score, row_i, row_j, ci, cj):
        score -= ci * row_i
        score -= cj * row_j


@dataclass(frozen=True)
class SolverConfig:
    """Stopping and resource knobs for one solve.

    `seed` is part of the config surface for reproducibility metadata; pair
    selection itself is deterministic (index-order tie-breaks) and draws no
    random numbers.
    """

    kkt_tol: float = 1e-3
    max_passes: int = 10_000_000
    cache_mb: int = 256
    seed: int = 0
    record_objective: bool = False

    def __post_init__(self) -> None:
        if self.kkt_tol <= 0:
            raise ConfigError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be >= 1")


class SvmModel:
    """Trained classifier: support vectors, multipliers, bias.

    `sv_indices` address rows of the dataset the model was trained on (the
    full dataset's index space, even when the solve ran on a view), so
    support-vector sets of models trained on different views of the same
    data are directly comparable.
    """

    def __init__(
        self,
        spec: KernelSpec,
        bias: float,
        sv_indices: Sequence[int],
        sv_labels: Sequence[int],
        alphas: Sequence[float],
        sv_vectors: Sequence[SparseVector],
        dim: int,
        training_view_id: str,
        flags: Sequence[str] = (),
        n_updates: int = 0,
        kkt_gap: float = 0.0,
        objective_trace: Sequence[float] = (),
    ) -> None:
        self.spec = spec
        self.bias = float(bias)
        self.sv_indices = tuple(int(i) for i in sv_indices)
        self.sv_labels = tuple(int(y) for y in sv_labels)
        self.alphas = tuple(float(a) for a in alphas)
        self.sv_vectors = tuple(sv_vectors)
        self.dim = int(dim)
        self.training_view_id = training_view_id
        self.flags = tuple(flags)
        self.n_updates = n_updates
        self.kkt_gap = kkt_gap
        self.objective_trace = tuple(objective_trace)
        self._sv_matrix = None
        self._sv_norms = None
        self._coef = np.asarray(self.alphas, dtype=np.float64) * np.asarray(self.sv_labels, dtype=np.float64)

    @property
    def degenerate(self) -> bool:
        return "degenerate" in self.flags

    @property
    def converged(self) -> bool:
        return "unconverged" not in self.flags

    def n_sv(self) -> int:
        return len(self.sv_indices)

    def sv_class_split(self) -> tuple[int, int]:
        pos = sum(1 for y in self.sv_labels if y > 0)
        return pos, len(self.sv_labels) - pos

    def _matrices(self, dim: int):
        if self._sv_matrix is None or self._sv_matrix.shape[1] < dim:
            from .data import _build_matrix  # local import to avoid cycle at module load

            self._sv_matrix = _build_matrix(self.sv_vectors, max(dim, self.dim, 1))
            if sp.issparse(self._sv_matrix):
                self._sv_norms = np.asarray(self._sv_matrix.multiply(self._sv_matrix).sum(axis=1)).ravel()
            else:
                self._sv_norms = np.einsum("ij,ij->i", self._sv_matrix, self._sv_matrix)
        return self._sv_matrix, self._sv_norms


def solve(
    dataset: Dataset,
    spec: KernelSpec,
    cfg: SolverConfig | None = None,
    indices: Sequence[int] | None = None,
) -> SvmModel:
    """Solve the dual on a dataset view and return the trained model.

    A single-class view yields a degenerate constant model (no support
    vectors, bias = that class's sign). Hitting `max_passes` returns the
    best-so-far iterate flagged "unconverged".
    """
    cfg = cfg or SolverConfig()
    view = np.arange(len(dataset)) if indices is None else np.asarray(list(indices), dtype=np.int64)
    if view.size == 0:
        raise MarginforgeError("cannot solve on an empty training view")
    y = np.asarray([dataset.labels[i] for i in view], dtype=np.float64)
    view_id = dataset.fingerprint()

    if np.all(y > 0) or np.all(y < 0):
        return SvmModel(
            spec, 1.0 if y[0] > 0 else -1.0, (), (), (), (), dataset.dim, view_id, flags=("degenerate",)
        )

    M = dataset.matrix()
    X = M[view]
    norms = dataset.row_norms_sq()[view]
    n = view.size
    shift = diagonal_shift(spec)
    box = spec.cost if spec.formulation is Formulation.L1 else math.inf

    def compute_row(i: int) -> np.ndarray:
        row = kernel_block(spec, X[i : i + 1], X, norms[i : i + 1], norms)[0]
        if shift:
            row[i] += shift
        return row

    cache = RowCache(cfg.cache_mb, compute_row)
    alpha = np.zeros(n, dtype=np.float64)
    pos = y > 0
    flags: list[str] = []
    trace: list[float] = []
    updates = 0
    stalls = 0
    gap = math.inf

    # score_i = y_i - F_i with F_i = sum_j alpha_j y_j K_eff(x_j, x_i); the
    # maximal-violating pair is argmax over `up` / argmin over `low` of it.
    # The eligibility masks flip in at most two entries per update, so they
    # are maintained incrementally instead of being recomputed.
    score = y.copy()
    up = pos.copy()  # alpha = 0: up-set is the positive class
    low = ~pos

    def refresh_masks(t: int) -> None:
        below_box = alpha[t] < box
        above_zero = alpha[t] > 0.0
        up[t] = below_box if pos[t] else above_zero
        low[t] = above_zero if pos[t] else below_box

    while True:
        i, j, gap = _select_pair(score, up, low)
        if i < 0 or j < 0:
            gap = 0.0
            break
        if gap <= cfg.kkt_tol or i == j:
            break
        if updates >= cfg.max_passes:
            flags.append("unconverged")
            break

        row_i = cache.get(i)
        row_j = cache.get(j)
        quad = row_i[i] + row_j[j] - 2.0 * row_i[j]
        if quad <= 0.0:
            quad = 1e-12
        gi = -y[i] * score[i]  # gradient of the minimization form
        gj = -y[j] * score[j]
        ai, aj = alpha[i], alpha[j]
        # Closed-form pair step with exact snapping at the box: whichever
        # multiplier hits a bound is set to it exactly and the partner is
        # rederived from the conserved pair quantity, so no float dust can
        # leave alphas marginally outside the box.
        if y[i] * y[j] < 0:
            step = (-gi - gj) / quad
            diff = ai - aj
            ai += step
            aj += step
            if diff > 0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > box:
                    ai = box
                    aj = box - diff
            else:
                if aj > box:
                    aj = box
                    ai = box + diff
        else:
            step = (gi - gj) / quad
            total = ai + aj
            ai -= step
            aj += step
            if total > box:
                if ai > box:
                    ai = box
                    aj = total - box
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > box:
                if aj > box:
                    aj = box
                    ai = total - box
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        di = ai - alpha[i]
        dj = aj - alpha[j]
        if di == 0.0 and dj == 0.0:
            stalls += 1
            if stalls >= _STALL_LIMIT:
                flags.append("unconverged")
                break
            continue
        stalls = 0
        alpha[i] = ai
        alpha[j] = aj
        refresh_masks(i)
        refresh_masks(j)
        _apply_update(score, row_i, row_j, di * y[i], dj * y[j])
        updates += 1
        if cfg.record_objective:
            trace.append(float(alpha.sum() - 0.5 * np.dot(alpha * y, y - score)))

    bias = _bias_from_state(alpha, y, score, box)
    sv_mask = alpha > 0.0
    sv_local = np.flatnonzero(sv_mask)
    model = SvmModel(
        spec,
        bias,
        view[sv_local],
        [int(dataset.labels[view[k]]) for k in sv_local],
        alpha[sv_local],
        [dataset.samples[view[k]] for k in sv_local],
        dataset.dim,
        view_id,
        flags=flags,
        n_updates=updates,
        kkt_gap=float(gap),
        objective_trace=trace,
    )
    return model


def _bias_from_state(alpha: np.ndarray, y: np.ndarray, g: np.ndarray, box: float) -> float:
    """Average of g_i = y_i - F_i over free SVs; KKT interval midpoint otherwise."""
    free = (alpha > 0.0) & (alpha < box)
    if free.any():
        return float(np.mean(g[free]))
    at_lower = alpha <= 0.0
    at_upper = alpha >= box
    lower_set = (at_lower & (y > 0)) | (at_upper & (y < 0))  # constraints b >= g_i
    upper_set = (at_lower & (y < 0)) | (at_upper & (y > 0))  # constraints b <= g_i
    lo = float(np.max(g[lower_set])) if lower_set.any() else -math.inf
    hi = float(np.min(g[upper_set])) if upper_set.any() else math.inf
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return hi
    if math.isinf(hi):
        return lo
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def decision_value(model: SvmModel, x: SparseVector) -> float:
    """sum_i y_i alpha_i K(X_i, x) + b, summed in sv_indices order."""
    if model.n_sv() == 0:
        return model.bias
    dim = max(model.dim, x.max_index(), 1)
    sv_matrix, sv_norms = model._matrices(dim)
    if sp.issparse(sv_matrix):
        xm = sp.csr_matrix((np.asarray([v for _, v in x.entries]),
                            (np.zeros(len(x.entries), dtype=np.int64),
                             np.asarray([i - 1 for i, _ in x.entries], dtype=np.int64))),
                           shape=(1, sv_matrix.shape[1]))
        xn = np.asarray([sum(v * v for _, v in x.entries)])
    else:
        xm = x.to_dense(sv_matrix.shape[1])[None, :]
        xn = np.einsum("ij,ij->i", xm, xm)
    k = kernel_block(model.spec, xm, sv_matrix, xn, sv_norms)[0]
    return float(k @ model._coef + model.bias)


def decision_values(model: SvmModel, dataset: Dataset, chunk: int = 2048) -> np.ndarray:
    """Vectorized decision values for every row of `dataset`."""
    n = len(dataset)
    if model.n_sv() == 0:
        return np.full(n, model.bias, dtype=np.float64)
    dim = max(model.dim, dataset.dim, 1)
    sv_matrix, sv_norms = model._matrices(dim)
    M = dataset.matrix()
    if M.shape[1] < sv_matrix.shape[1]:
        M = _pad_columns(M, sv_matrix.shape[1])
    norms = dataset.row_norms_sq()
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        k = kernel_block(model.spec, M[start:stop], sv_matrix, norms[start:stop], sv_norms)
        out[start:stop] = k @ model._coef + model.bias
    return out


def _pad_columns(M, width: int):
    if sp.issparse(M):
        return sp.hstack([M, sp.csr_matrix((M.shape[0], width - M.shape[1]))]).tocsr()
    return np.hstack([M, np.zeros((M.shape[0], width - M.shape[1]))])


def classify(model: SvmModel, x: SparseVector) -> int:
    """Sign of the decision value; exact zeros classify as +1."""
    return 1 if decision_value(model, x) >= 0.0 else -1


def classify_batch(model: SvmModel, dataset: Dataset) -> np.ndarray:
    return np.where(decision_values(model, dataset) >= 0.0, 1, -1)


# ---------------------------------------------------------------------------
# Diagnostics used by tests and reporting
# ---------------------------------------------------------------------------


def dual_objective(
    dataset: Dataset,
    spec: KernelSpec,
    alphas: Sequence[float],
    indices: Sequence[int] | None = None,
) -> float:
    """Exact dual objective for the given multipliers (feasible or not).

    Streams one kernel row at a time; O(n^2) kernel evaluations, intended
    for verification and small-view reporting.
    """
    view = np.arange(len(dataset)) if indices is None else np.asarray(list(indices), dtype=np.int64)
    if len(alphas) != view.size:
        raise ConfigError(f"{len(alphas)} multipliers for a view of size {view.size}")
    a = np.asarray(alphas, dtype=np.float64)
    y = np.asarray([dataset.labels[i] for i in view], dtype=np.float64)
    X = dataset.matrix()[view]
    norms = dataset.row_norms_sq()[view]
    shift = diagonal_shift(spec)
    w = a * y
    quad = 0.0
    for i in range(view.size):
        row = kernel_block(spec, X[i : i + 1], X, norms[i : i + 1], norms)[0]
        if shift:
            row[i] += shift
        quad += w[i] * float(row @ w)
    return float(a.sum() - 0.5 * quad)


def kkt_violation(
    dataset: Dataset,
    spec: KernelSpec,
    alphas: Sequence[float],
    indices: Sequence[int] | None = None,
) -> float:
    """Maximal first-order KKT gap of the given multipliers on the view."""
    view = np.arange(len(dataset)) if indices is None else np.asarray(list(indices), dtype=np.int64)
    a = np.asarray(alphas, dtype=np.float64)
    y = np.asarray([dataset.labels[i] for i in view], dtype=np.float64)
    X = dataset.matrix()[view]
    norms = dataset.row_norms_sq()[view]
    shift = diagonal_shift(spec)
    K = kernel_block(spec, X, X, norms, norms)
    if shift:
        K[np.diag_indices_from(K)] += shift
    F = K @ (a * y)
    score = y - F
    box = spec.cost if spec.formulation is Formulation.L1 else math.inf
    up = ((y > 0) & (a < box)) | ((y < 0) & (a > 0))
    low = ((y < 0) & (a < box)) | ((y > 0) & (a > 0))
    if not up.any() or not low.any():
        return 0.0
    return float(np.max(score[up]) - np.min(score[low]))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: SvmModel) -> dict:
    return {
        "spec": model.spec.to_config(),
        "bias": model.bias,
        "rows": [
            {"sv_index": i, "y": y, "alpha": a}
            for i, y, a in zip(model.sv_indices, model.sv_labels, model.alphas)
        ],
        "training_view_id": model.training_view_id,
        "flags": list(model.flags),
    }


def model_from_dict(doc: dict, dataset: Dataset) -> SvmModel:
    """Rebind a serialized model to the dataset it was trained on."""
    view_id = doc.get("training_view_id", "")
    if view_id and dataset.fingerprint() != view_id:
        raise ConfigError("model was trained on a different dataset (fingerprint mismatch)")
    rows = doc["rows"]
    idx = [int(r["sv_index"]) for r in rows]
    return SvmModel(
        KernelSpec.from_config(doc["spec"]),
        float(doc["bias"]),
        idx,
        [int(r["y"]) for r in rows],
        [float(r["alpha"]) for r in rows],
        [dataset.samples[i] for i in idx],
        dataset.dim,
        view_id or dataset.fingerprint(),
        flags=tuple(doc.get("flags", ())),
    )
