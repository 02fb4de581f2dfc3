"""Kernel functions on sparse vectors and vectorized kernel blocks.

Three families: linear x_j'x, polynomial (gamma x_j'x)^p with no additive
constant, and RBF exp(-gamma ||x - x_j||^2). The L2 soft-margin variant is
realized as a diagonal kernel shift of 1/(2C) with the box constraint
removed; `effective_diagonal` exposes that shifted same-index value.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from .data import SparseVector
from .errors import ConfigError, MarginforgeError

Matrix = Union[np.ndarray, sp.csr_matrix]


class KernelFamily(str, Enum):
    LINEAR = "linear"
    POLYNOMIAL = "poly"
    RBF = "rbf"


class Formulation(str, Enum):
    L1 = "l1"
    L2 = "l2"


DISPLAY_NAMES = {
    KernelFamily.LINEAR: "Linear",
    KernelFamily.POLYNOMIAL: "Polynomial",
    KernelFamily.RBF: "Radial basis",
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, its parameters, the soft-margin formulation and cost."""

    family: KernelFamily
    cost: float
    gamma: float | None = None
    degree: int | None = None
    formulation: Formulation = Formulation.L1

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise ConfigError(f"cost must be positive, got {self.cost}")
        if self.family is KernelFamily.LINEAR:
            if self.gamma is not None:
                raise ConfigError("linear kernel takes no gamma")
        else:
            if self.gamma is None or self.gamma <= 0:
                raise ConfigError(f"{self.family.value} kernel needs gamma > 0")
        if self.family is KernelFamily.POLYNOMIAL:
            if self.degree is None or self.degree < 1:
                raise ConfigError("polynomial kernel needs integer degree >= 1")
        elif self.degree is not None:
            raise ConfigError(f"{self.family.value} kernel takes no degree")

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.family]

    def to_config(self) -> dict:
        out: dict = {"kernel": self.family.value, "cost": self.cost, "formulation": self.formulation.value}
        if self.gamma is not None:
            out["gamma"] = self.gamma
        if self.degree is not None:
            out["degree"] = self.degree
        return out

    @staticmethod
    def from_config(cfg: dict) -> "KernelSpec":
        try:
            family = KernelFamily(cfg["kernel"])
        except (KeyError, ValueError):
            raise ConfigError(f"unknown kernel in config: {cfg.get('kernel')!r}") from None
        return KernelSpec(
            family=family,
            cost=float(cfg.get("cost", 1.0)),
            gamma=(float(cfg["gamma"]) if cfg.get("gamma") is not None else None),
            degree=(int(cfg["degree"]) if cfg.get("degree") is not None else None),
            formulation=Formulation(cfg.get("formulation", "l1")),
        )


def _merged_dot_and_sqdist(x: SparseVector, z: SparseVector) -> tuple[float, float]:
    """Single ascending-index traversal; canonical order keeps the result
    bit-identical under argument swap."""
    dot = 0.0
    sqdist = 0.0
    a, b = x.entries, z.entries
    i = j = 0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        ia, va = a[i]
        ib, vb = b[j]
        if ia == ib:
            dot += va * vb
            d = va - vb
            sqdist += d * d
            i += 1
            j += 1
        elif ia < ib:
            sqdist += va * va
            i += 1
        else:
            sqdist += vb * vb
            j += 1
    while i < na:
        va = a[i][1]
        sqdist += va * va
        i += 1
    while j < nb:
        vb = b[j][1]
        sqdist += vb * vb
        j += 1
    return dot, sqdist


def kernel_eval(spec: KernelSpec, x: SparseVector, z: SparseVector) -> float:
    """K(x, z) for the spec's family; exactly symmetric in its arguments."""
    dot, sqdist = _merged_dot_and_sqdist(x, z)
    if spec.family is KernelFamily.LINEAR:
        return dot
    if spec.family is KernelFamily.POLYNOMIAL:
        return (spec.gamma * dot) ** spec.degree
    return math.exp(-spec.gamma * sqdist)


def diagonal_shift(spec: KernelSpec) -> float:
    """Additive same-index diagonal term: 1/(2C) under L2, zero under L1."""
    return 1.0 / (2.0 * spec.cost) if spec.formulation is Formulation.L2 else 0.0


def effective_diagonal(spec: KernelSpec, x: SparseVector) -> float:
    """K(x, x) + 1/(2C), the same-training-index diagonal of the L2 dual."""
    if spec.formulation is not Formulation.L2:
        raise MarginforgeError("effective_diagonal applies only to the L2 formulation")
    return kernel_eval(spec, x, x) + 1.0 / (2.0 * spec.cost)


# ---------------------------------------------------------------------------
# Vectorized blocks
# ---------------------------------------------------------------------------


def kernel_block(
    spec: KernelSpec,
    A: Matrix,
    B: Matrix,
    a_norms: np.ndarray | None = None,
    b_norms: np.ndarray | None = None,
) -> np.ndarray:
    """Dense block K[i, j] = K(A_i, B_j) for row matrices A and B.

    The RBF path expands ||a-b||^2 through row norms; the tiny negative
    residues that expansion can produce are clamped at zero so K stays in
    (0, 1].
    """
    G = A @ B.T
    if sp.issparse(G):
        G = np.asarray(G.todense())
    G = np.asarray(G, dtype=np.float64)
    if spec.family is KernelFamily.LINEAR:
        return G
    if spec.family is KernelFamily.POLYNOMIAL:
        return (spec.gamma * G) ** spec.degree
    if a_norms is None:
        a_norms = _row_norms_sq(A)
    if b_norms is None:
        b_norms = _row_norms_sq(B)
    d2 = a_norms[:, None] + b_norms[None, :] - 2.0 * G
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-spec.gamma * d2)


def _row_norms_sq(M: Matrix) -> np.ndarray:
    if sp.issparse(M):
        return np.asarray(M.multiply(M).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", M, M)


class RowCache:
    """LRU cache of full kernel rows, bounded by an in-memory byte budget.

    Purely a memoization layer: values returned with the cache enabled are
    the same arrays the compute callback would produce, bit for bit.
    """

    def __init__(self, capacity_mb: int, compute: Callable[[int], np.ndarray]):
        self._budget = int(capacity_mb) * (1 << 20)
        self._compute = compute
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self._bytes = 0
        self.hits = 0
        self.misses = 0

    def get(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self.hits += 1
            self._rows.move_to_end(i)
            return row
        self.misses += 1
        row = self._compute(i)
        if self._budget > 0:
            self._rows[i] = row
            self._bytes += row.nbytes
            while self._bytes > self._budget and len(self._rows) > 1:
                _, old = self._rows.popitem(last=False)
                self._bytes -= old.nbytes
        return row
