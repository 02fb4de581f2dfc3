"""Sparse datasets in LibSVM text format: parsing, serialization, splitting
and seeded subsampling.

A dataset is an immutable collection of sparse feature rows with labels in
{+1, -1}. Rows keep their file order; every index-based view elsewhere in
the toolkit refers to positions in that order.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, MarginforgeError, ParseError
from .rng import child_rng

# Above this feature count the dataset matrix stays sparse (CSR).
DENSE_DIM_LIMIT = 4096


@dataclass(frozen=True)
class SparseVector:
    """One observation's features as sorted (index, value) pairs, 1-based."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        prev = 0
        for idx, val in self.entries:
            if idx <= prev:
                raise ValueError(f"indices must be strictly ascending and >= 1, got {idx} after {prev}")
            if not math.isfinite(val):
                raise ValueError(f"non-finite value at index {idx}")
            prev = idx

    @staticmethod
    def from_pairs(pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        return SparseVector(tuple((int(i), float(v)) for i, v in pairs))

    @staticmethod
    def from_dense(values: Sequence[float]) -> "SparseVector":
        return SparseVector(tuple((i + 1, float(v)) for i, v in enumerate(values) if v != 0.0))

    def max_index(self) -> int:
        return self.entries[-1][0] if self.entries else 0

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim, dtype=np.float64)
        for idx, val in self.entries:
            out[idx - 1] = val
        return out


class Dataset:
    """Immutable labelled collection of SparseVectors.

    `dim` is at least the largest feature index present (and >= 1 when the
    dataset is nonempty); a parent dimension may be passed down to keep
    train/test splits in one feature space. The dense/CSR feature matrix and
    derived arrays are built lazily and cached; instances are safe to share
    across concurrent readers.
    """

    __slots__ = ("samples", "labels", "dim", "_lock", "_matrix", "_norms", "_fingerprint")

    def __init__(
        self,
        samples: Sequence[SparseVector],
        labels: Sequence[int],
        dim: int | None = None,
    ) -> None:
        if len(samples) != len(labels):
            raise ValueError(f"{len(samples)} samples but {len(labels)} labels")
        for y in labels:
            if y not in (1, -1):
                raise ValueError(f"labels must be +1 or -1, got {y!r}")
        max_idx = max((s.max_index() for s in samples), default=0)
        if dim is None:
            dim = max(1, max_idx) if samples else 0
        elif samples and dim < max(1, max_idx):
            raise ValueError(f"dim {dim} smaller than max feature index {max_idx}")
        self.samples: tuple[SparseVector, ...] = tuple(samples)
        self.labels: tuple[int, ...] = tuple(int(y) for y in labels)
        self.dim: int = dim
        self._lock = threading.Lock()
        self._matrix = None
        self._norms = None
        self._fingerprint: str | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.samples == other.samples and self.labels == other.labels and self.dim == other.dim

    def __hash__(self) -> int:  # identity hash; content equality via fingerprint
        return id(self)

    def labels_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.float64)

    def class_indices(self) -> dict[int, np.ndarray]:
        y = np.asarray(self.labels)
        return {+1: np.flatnonzero(y == 1), -1: np.flatnonzero(y == -1)}

    def matrix(self) -> Union[np.ndarray, sp.csr_matrix]:
        """Feature matrix, dense below DENSE_DIM_LIMIT features, CSR above."""
        with self._lock:
            if self._matrix is None:
                self._matrix = _build_matrix(self.samples, self.dim)
            return self._matrix

    def row_norms_sq(self) -> np.ndarray:
        with self._lock:
            if self._norms is None:
                m = self._matrix if self._matrix is not None else _build_matrix(self.samples, self.dim)
                self._matrix = m
                if sp.issparse(m):
                    self._norms = np.asarray(m.multiply(m).sum(axis=1)).ravel()
                else:
                    self._norms = np.einsum("ij,ij->i", m, m)
            return self._norms

    def fingerprint(self) -> str:
        """Content hash identifying this dataset's index space."""
        with self._lock:
            if self._fingerprint is None:
                digest = hashlib.sha256(dumps_libsvm(self).encode("utf-8"))
                self._fingerprint = digest.hexdigest()
            return self._fingerprint


def _build_matrix(samples: Sequence[SparseVector], dim: int) -> Union[np.ndarray, sp.csr_matrix]:
    n = len(samples)
    if dim <= DENSE_DIM_LIMIT:
        out = np.zeros((n, max(dim, 1)), dtype=np.float64)
        for i, s in enumerate(samples):
            for idx, val in s.entries:
                out[i, idx - 1] = val
        return out
    indptr = np.zeros(n + 1, dtype=np.int64)
    cols: list[int] = []
    vals: list[float] = []
    for i, s in enumerate(samples):
        for idx, val in s.entries:
            cols.append(idx - 1)
            vals.append(val)
        indptr[i + 1] = len(cols)
    return sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), np.asarray(cols, dtype=np.int64), indptr),
        shape=(n, dim),
    )


# ---------------------------------------------------------------------------
# LibSVM text format
# ---------------------------------------------------------------------------


def parse_libsvm(source: Union[str, bytes, IO[bytes], IO[str]]) -> Dataset:
    """Parse LibSVM sparse text: `<label> <idx>:<val> ...` per line.

    Labels are mapped to {+1, -1} (strictly positive -> +1, else -1).
    Indices are 1-based and must be strictly ascending per line; values must
    be finite. Any malformed token, including stray comments, is rejected
    with the offending line number.
    """
    if hasattr(source, "read"):
        source = source.read()  # type: ignore[union-attr]
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = source
    samples: list[SparseVector] = []
    labels: list[int] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label_val = float(tokens[0])
        except ValueError:
            raise ParseError(line_no, f"label {tokens[0]!r} is not a number") from None
        if not math.isfinite(label_val):
            raise ParseError(line_no, f"label {tokens[0]!r} is not finite")
        entries: list[tuple[int, float]] = []
        prev_idx = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(line_no, f"malformed token {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(line_no, f"malformed token {tok!r}") from None
            if idx < 1:
                raise ParseError(line_no, f"feature index {idx} must be >= 1")
            if idx == prev_idx:
                raise ParseError(line_no, f"duplicate feature index {idx}")
            if idx < prev_idx:
                raise ParseError(line_no, f"non-ascending feature index {idx} after {prev_idx}")
            if not math.isfinite(val):
                raise ParseError(line_no, f"non-finite value for index {idx}")
            entries.append((idx, val))
            prev_idx = idx
        samples.append(SparseVector(tuple(entries)))
        labels.append(1 if label_val > 0 else -1)
    return Dataset(samples, labels)


def load_libsvm(path: Union[str, Path]) -> Dataset:
    return parse_libsvm(Path(path).read_bytes())


def dumps_libsvm(dataset: Dataset) -> str:
    """Serialize with %+d labels and shortest round-trip value formatting."""
    lines = []
    for sample, label in zip(dataset.samples, dataset.labels):
        parts = [f"{label:+d}"]
        parts.extend(f"{idx}:{val!r}" for idx, val in sample.entries)
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def dump_libsvm(dataset: Dataset, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_libsvm(dataset), encoding="utf-8")


# ---------------------------------------------------------------------------
# Splitting and subsampling
# ---------------------------------------------------------------------------


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint train/test partition: ceil((1-f)*n) train rows, rest test."""
    n = len(dataset)
    if n == 0:
        raise MarginforgeError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0,1), got {test_fraction}")
    n_train = math.ceil((1.0 - test_fraction) * n)
    perm = child_rng(seed, 0).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return take(dataset, train_idx), take(dataset, test_idx)


def take(dataset: Dataset, indices: Sequence[int]) -> Dataset:
    """New Dataset of the given rows, preserving the parent's dim."""
    samples = [dataset.samples[i] for i in indices]
    labels = [dataset.labels[i] for i in indices]
    return Dataset(samples, labels, dim=dataset.dim if samples else None)


def exact_floor_fraction(fraction: float, n: int, divisor: int = 1) -> int:
    """floor(fraction*n/divisor) computed exactly from the decimal the caller wrote.

    Plain float evaluation mis-floors cases like 0.3*10; going through the
    shortest-repr Fraction recovers the intended rational.
    """
    return int(Fraction(str(float(fraction))) * n / divisor)


@dataclass(frozen=True)
class SubsamplePlan:
    """L pairwise-disjoint index sets of equal size plus their pooled union."""

    subsample_indices: tuple[tuple[int, ...], ...]
    pooled: tuple[int, ...]
    seed: int
    subsample_size: int = field(default=0)

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for block in self.subsample_indices:
            if len(block) != self.subsample_size:
                raise ValueError("subsample size mismatch")
            if seen.intersection(block):
                raise ValueError("subsamples are not disjoint")
            seen.update(block)
        if tuple(sorted(seen)) != self.pooled:
            raise ValueError("pooled set does not match the union of subsamples")


def draw_disjoint_subsamples(n: int, delta: float, num_bags: int, seed: int) -> SubsamplePlan:
    """Draw num_bags disjoint index sets of size floor(delta*n/num_bags)."""
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must be in (0,1), got {delta}")
    if num_bags < 1:
        raise ConfigError(f"number of subsamples must be >= 1, got {num_bags}")
    size = exact_floor_fraction(delta, n, num_bags)
    if size == 0:
        raise ConfigError(f"subsample size floor({delta}*{n}/{num_bags}) is zero")
    perm = child_rng(seed, 0).permutation(n)
    chosen = perm[: num_bags * size]
    blocks = tuple(
        tuple(sorted(int(i) for i in chosen[b * size : (b + 1) * size])) for b in range(num_bags)
    )
    pooled = tuple(sorted(int(i) for i in chosen))
    return SubsamplePlan(blocks, pooled, seed, subsample_size=size)


# ---------------------------------------------------------------------------
# Optional feature scaling
# ---------------------------------------------------------------------------


class MinMaxScaler:
    """Per-feature min-max scaling to [0,1], fit on train, applied to test.

    Operates on the dense interpretation (absent entries count as 0), so it
    is limited to datasets below DENSE_DIM_LIMIT features. Constant features
    map to 0.
    """

    def __init__(self, mins: np.ndarray, ranges: np.ndarray):
        self.mins = mins
        self.ranges = ranges

    @staticmethod
    def fit(dataset: Dataset) -> "MinMaxScaler":
        if dataset.dim > DENSE_DIM_LIMIT:
            raise ConfigError("min-max scaling requires a dense feature space")
        m = dataset.matrix()
        mins = m.min(axis=0)
        ranges = m.max(axis=0) - mins
        return MinMaxScaler(mins, ranges)

    def transform(self, dataset: Dataset) -> Dataset:
        m = np.asarray(dataset.matrix(), dtype=np.float64)
        safe = np.where(self.ranges > 0, self.ranges, 1.0)
        scaled = (m - self.mins) / safe
        scaled[:, self.ranges == 0] = 0.0
        samples = [SparseVector.from_dense(row) for row in scaled]
        return Dataset(samples, dataset.labels, dim=dataset.dim)
