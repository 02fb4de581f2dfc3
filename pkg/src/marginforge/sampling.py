"""Subsample training pipelines: local-sampling SVM and the CGLQ baseline.

Local sampling: solve the SVM on L disjoint bags of a delta-fraction of the
training data, pool the bag support vectors, estimate a support-vector
intensity around each pooled vector from its k-th-NN distance (k = floor(ln
m)), then draw extra training points from fixed-radius balls around the
pooled vectors with per-center fractions proportional to 1/radius, and
solve once more on the enriched set.

CGLQ: iteratively grow a working set with the K nearest neighbors of the
current support vectors plus a fresh random subsample, re-solving until the
validation error stops improving.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SubsamplePlan, draw_disjoint_subsamples, exact_floor_fraction
from .errors import ConfigError, PipelineError
from .kernels import KernelSpec
from .neighbors import NeighborIndex, median_radius, points_in_ball
from .rng import child_rng
from .solver import SolverConfig, SvmModel, classify_batch, solve

log = logging.getLogger(__name__)

# Seed stream ids; every stochastic draw hangs off (seed, stream, ...).
_STREAM_PLAN = 1
_STREAM_BALL_DRAW = 2
_STREAM_CGLQ_ROUND = 3
_STREAM_CGLQ_REDRAW = 4


@dataclass(frozen=True)
class BetaSchedule:
    """Ball-radius scale sweep: start, +step per iteration, hard cap."""

    start: float = 0.1
    step: float = 0.1
    cap: float = 2.0

    def __post_init__(self) -> None:
        if self.start <= 0 or self.step <= 0 or self.cap < self.start:
            raise ConfigError(f"invalid radius-scale schedule {self}")


@dataclass(frozen=True)
class LocalSamplingConfig:
    """Parameters of one local-sampling run (or of a swept family of runs)."""

    sample_fraction: float  # delta: fraction of the training data pooled into bags
    num_bags: int  # L
    kernel: KernelSpec
    solver: SolverConfig = field(default_factory=SolverConfig)
    radius_scale: float | None = None  # beta for a single run
    schedule: BetaSchedule | None = None  # beta sweep (used by tuning)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.sample_fraction < 1.0:
            raise ConfigError(f"sample fraction must be in (0,1), got {self.sample_fraction}")
        if self.num_bags < 1:
            raise ConfigError(f"bag count must be >= 1, got {self.num_bags}")
        if self.radius_scale is not None and self.radius_scale <= 0:
            raise ConfigError(f"radius scale must be > 0, got {self.radius_scale}")

    def with_seed(self, seed: int) -> "LocalSamplingConfig":
        return LocalSamplingConfig(
            self.sample_fraction, self.num_bags, self.kernel, self.solver,
            self.radius_scale, self.schedule, seed,
        )


@dataclass(frozen=True)
class CglqConfig:
    """Parameters of a CGLQ run."""

    sample_fraction: float  # delta
    n_neighbors: int  # K nearest neighbors added around each support vector
    kernel: KernelSpec
    solver: SolverConfig = field(default_factory=SolverConfig)
    improvement_tol: float = 0.001  # stop when the error improves by less
    max_rounds: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.sample_fraction < 1.0:
            raise ConfigError(f"sample fraction must be in (0,1), got {self.sample_fraction}")
        if self.n_neighbors < 1:
            raise ConfigError(f"neighbor count must be >= 1, got {self.n_neighbors}")
        if self.improvement_tol < 0:
            raise ConfigError("improvement tolerance must be >= 0")
        if self.max_rounds < 1:
            raise ConfigError("max rounds must be >= 1")


@dataclass(frozen=True)
class EnrichmentTrace:
    """Provenance of one enrichment pass."""

    initial_sv_indices: tuple[int, ...]  # pooled bag support vectors (global ids)
    neighbor_rank: int  # k = clamp(floor(ln m), 1, m-1)
    radii: tuple[float, ...]  # k-th-NN distance of each pooled SV within the pool
    median_radius: float
    ball_radius: float  # beta * median
    weights: tuple[float, ...]  # per-center sampling fractions, sum to 1
    sampled: tuple[tuple[int, ...], ...]  # drawn ids per center (may overlap)
    final_indices: tuple[int, ...]  # deduplicated training set of the final solve
    neighbor_s: float = field(default=0.0, compare=False)  # wall times are volatile
    sampling_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        counts = np.asarray([len(s) for s in self.sampled], dtype=np.int64)
        hist, edges = np.histogram(np.asarray(self.weights), bins=10, range=(0.0, max(self.weights) or 1.0))
        return {
            "initial_sv_count": len(self.initial_sv_indices),
            "neighbor_rank": self.neighbor_rank,
            "median_radius": self.median_radius,
            "ball_radius": self.ball_radius,
            "weight_histogram": {
                "counts": hist.tolist(),
                "edges": [float(e) for e in edges],
            },
            "sampled_total": int(counts.sum()),
            "final_size": len(self.final_indices),
            "timings_s": {"neighbors": self.neighbor_s, "sampling": self.sampling_s},
        }


@dataclass(frozen=True)
class PhaseTimings:
    bagging_s: float = 0.0
    neighbors_s: float = 0.0
    sampling_s: float = 0.0
    final_solve_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.bagging_s + self.neighbors_s + self.sampling_s + self.final_solve_s

    def to_dict(self) -> dict:
        return {
            "bagging": self.bagging_s,
            "neighbors": self.neighbors_s,
            "sampling": self.sampling_s,
            "final_solve": self.final_solve_s,
            "total": self.total_s,
        }


@dataclass(frozen=True)
class BaggingState:
    """Step (i)-(ii) output: the plan, pooled SV ids, and bag wall time."""

    plan: SubsamplePlan
    sv_indices: tuple[int, ...]
    elapsed_s: float


def initial_bagging(train: Dataset, cfg: LocalSamplingConfig, threads: int = 1) -> BaggingState:
    """Draw L disjoint bags, solve each independently, pool the SV sets.

    Single-class bags yield degenerate models and contribute no support
    vectors; if every bag is degenerate the pipeline cannot continue.
    """
    t0 = time.perf_counter()
    plan = draw_disjoint_subsamples(len(train), cfg.sample_fraction, cfg.num_bags, _plan_seed(cfg.seed))

    def solve_bag(bag: tuple[int, ...]) -> SvmModel:
        return solve(train, cfg.kernel, cfg.solver, indices=bag)

    if threads > 1 and cfg.num_bags > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(solve_bag, plan.subsample_indices))
    else:
        models = [solve_bag(bag) for bag in plan.subsample_indices]

    pooled_svs: set[int] = set()
    for model in models:
        pooled_svs.update(model.sv_indices)
    if not pooled_svs:
        raise PipelineError("no initial support vectors: every bag was degenerate")
    return BaggingState(plan, tuple(sorted(pooled_svs)), time.perf_counter() - t0)


def _plan_seed(seed: int) -> int:
    return int(np.random.SeedSequence((seed, _STREAM_PLAN)).generate_state(1, dtype=np.uint64)[0])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sampling_weights(radii) -> np.ndarray:
    """Normalized inverse-radius weights; zero radii are floored first.

    A zero radius (duplicate points) is replaced by 1e-12 * max(radii)
    before inversion; if every radius is zero the weights fall back to
    uniform.
    """
    rho = np.asarray(radii, dtype=np.float64)
    if rho.size == 0:
        raise ConfigError("no radii to weight")
    if np.any(rho < 0):
        raise ConfigError("radii must be non-negative")
    top = float(rho.max())
    if top == 0.0:
        return np.full(rho.size, 1.0 / rho.size)
    floor = 1e-12 * top
    inv = 1.0 / np.where(rho == 0.0, floor, rho)
    return inv / inv.sum()


def enrich(
    train: Dataset,
    pooled: tuple[int, ...],
    sv_indices: tuple[int, ...],
    radius_scale: float,
    seed: int,
) -> EnrichmentTrace:
    """Steps (iii)-(iv): per-SV ball sampling of the unseen data.

    Around every pooled support vector, a fraction w_j (inverse-k-th-NN
    radius, normalized) of the candidate points lying in the fixed-radius
    ball and outside the pooled bags is drawn uniformly without
    replacement; fraction-to-count uses round-half-up. Draw j consumes the
    child seed (seed, draw-stream, j), so the result is independent of
    evaluation order.
    """
    m = len(sv_indices)
    if m < 2:
        raise PipelineError(f"enrichment needs at least two pooled support vectors, got {m}")
    if radius_scale <= 0:
        raise ConfigError(f"radius scale must be > 0, got {radius_scale}")

    t0 = time.perf_counter()
    rank = min(max(int(math.floor(math.log(m))), 1), m - 1)
    index = NeighborIndex([train.samples[g] for g in sv_indices], dim=train.dim)
    radii = tuple(index.kth_nn_distance(t, rank) for t in range(m))
    med = median_radius(radii)
    ball_radius = radius_scale * med
    weights = sampling_weights(radii)
    t1 = time.perf_counter()

    excluded = set(pooled)
    sampled: list[tuple[int, ...]] = []
    for t in range(m):
        if ball_radius <= 0.0:  # all pooled SVs coincide; nothing to sample
            sampled.append(())
            continue
        candidates = points_in_ball(train, excluded, train.samples[sv_indices[t]], ball_radius)
        count = round_half_up(weights[t] * len(candidates))
        if count == 0:
            sampled.append(())
            continue
        rng = child_rng(seed, _STREAM_BALL_DRAW, t)
        draw = rng.choice(len(candidates), size=count, replace=False)
        sampled.append(tuple(sorted(candidates[d] for d in draw)))
    final = set(sv_indices)
    for block in sampled:
        final.update(block)
    t2 = time.perf_counter()

    return EnrichmentTrace(
        initial_sv_indices=tuple(sv_indices),
        neighbor_rank=rank,
        radii=radii,
        median_radius=med,
        ball_radius=ball_radius,
        weights=tuple(float(w) for w in weights),
        sampled=tuple(sampled),
        final_indices=tuple(sorted(final)),
        neighbor_s=t1 - t0,
        sampling_s=t2 - t1,
    )


@dataclass(frozen=True)
class LocalSamplingResult:
    model: SvmModel
    trace: EnrichmentTrace
    timings: PhaseTimings
    initial_sv_count: int


def local_sampling_svm(
    train: Dataset,
    cfg: LocalSamplingConfig,
    threads: int = 1,
    bagging: BaggingState | None = None,
) -> LocalSamplingResult:
    """Full pipeline for one radius scale: bag, pool, enrich, final solve.

    A precomputed BaggingState may be passed to share steps (i)-(ii) across
    a radius-scale sweep; its wall time is still charged to this run.
    """
    if cfg.radius_scale is None:
        raise ConfigError("radius_scale must be set for a single local-sampling run")
    state = bagging if bagging is not None else initial_bagging(train, cfg, threads=threads)
    trace = enrich(train, state.plan.pooled, state.sv_indices, cfg.radius_scale, cfg.seed)
    t0 = time.perf_counter()
    model = solve(train, cfg.kernel, cfg.solver, indices=trace.final_indices)
    final_s = time.perf_counter() - t0
    timings = PhaseTimings(
        bagging_s=state.elapsed_s,
        neighbors_s=trace.neighbor_s,
        sampling_s=trace.sampling_s,
        final_solve_s=final_s,
    )
    return LocalSamplingResult(model, trace, timings, len(state.sv_indices))


@dataclass(frozen=True)
class CglqResult:
    model: SvmModel
    rounds: int  # enrichment rounds executed (round 0 is the initial solve)
    elapsed_s: float
    initial_sv_count: int
    errors: tuple[float, ...]  # validation error per round, round 0 first


def cglq(train: Dataset, cfg: CglqConfig, validation: Dataset) -> CglqResult:
    """Subsample + k-NN enrichment baseline.

    Round 0 solves on one random delta-fraction subsample. Each later round
    re-solves on current SVs + their K nearest neighbors in the complete
    sample + a fresh random delta-fraction subsample, and the loop stops
    when the absolute validation-error improvement drops below the
    configured tolerance or the round budget runs out. The best-error
    round's model is returned.
    """
    if len(validation) == 0:
        raise ConfigError("CGLQ needs a nonempty validation set")
    n = len(train)
    size = exact_floor_fraction(cfg.sample_fraction, n)
    if size < 1:
        raise ConfigError(f"subsample size floor({cfg.sample_fraction}*{n}) is zero")
    k = cfg.n_neighbors
    if k > n - 1:
        log.warning("CGLQ neighbor count %d clamped to %d", k, n - 1)
        k = n - 1

    t0 = time.perf_counter()
    labels = np.asarray(train.labels)
    val_labels = np.asarray(validation.labels)

    def fresh_subsample(round_no: int) -> np.ndarray:
        rng = child_rng(cfg.seed, _STREAM_CGLQ_ROUND, round_no)
        return np.sort(rng.choice(n, size=size, replace=False))

    initial = fresh_subsample(0)
    if len(set(labels[initial])) < 2:
        initial = np.sort(child_rng(cfg.seed, _STREAM_CGLQ_REDRAW).choice(n, size=size, replace=False))
        if len(set(labels[initial])) < 2:
            raise PipelineError("initial CGLQ subsample is single-class after redraw")

    def evaluate(model: SvmModel) -> float:
        return float(np.mean(classify_batch(model, validation) != val_labels))

    model = solve(train, cfg.kernel, cfg.solver, indices=initial)
    err = evaluate(model)
    initial_sv_count = model.n_sv()
    best_err, best_model = err, model
    errors = [err]
    index = NeighborIndex(train.samples, dim=train.dim)

    rounds = 0
    prev_err = err
    for round_no in range(1, cfg.max_rounds + 1):
        working = set(model.sv_indices)
        for g in model.sv_indices:
            working.update(index.k_nearest(g, k))
        working.update(int(i) for i in fresh_subsample(round_no))
        model = solve(train, cfg.kernel, cfg.solver, indices=tuple(sorted(working)))
        err = evaluate(model)
        errors.append(err)
        rounds = round_no
        if err < best_err:
            best_err, best_model = err, model
        improvement = prev_err - err
        prev_err = err
        if improvement < cfg.improvement_tol:
            break

    return CglqResult(best_model, rounds, time.perf_counter() - t0, initial_sv_count, tuple(errors))
