"""Hyperparameter search, the radius-scale sweep, benchmark metrics and the
indecision-probability estimator.

The cross-validation protocol mirrors the benchmark setup: 10-fold CV on a
small stratified sample (about 1% of training data), ties broken toward the
smaller cost and then the smaller gamma. The sweep and metric layout follow
the experiment tables: per-run support-vector counts, overlap with the
full-data model, error ratios and relative wall time.
"""

from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset, take
from .errors import ConfigError, MarginforgeError
from .kernels import Formulation, KernelFamily, KernelSpec
from .rng import child_rng
from .sampling import (
    BetaSchedule,
    EnrichmentTrace,
    LocalSamplingConfig,
    PhaseTimings,
    initial_bagging,
    local_sampling_svm,
    round_half_up,
)
from .solver import SolverConfig, SvmModel, classify_batch, decision_values, solve

log = logging.getLogger(__name__)

_STREAM_CV_SAMPLE = 10
_STREAM_CV_FOLDS = 11
_STREAM_INDECISION = 13


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamGrid:
    """Candidate costs/gammas/degrees; gammas and degrees apply per family."""

    costs: tuple[float, ...] = (0.1, 1.0, 5.0, 10.0)
    gammas: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0, 5.0)
    degrees: tuple[int, ...] = (2, 3)

    def __post_init__(self) -> None:
        if not self.costs:
            raise ConfigError("grid needs at least one cost")

    def candidates(self, family: KernelFamily, formulation: Formulation) -> list[KernelSpec]:
        if family is KernelFamily.LINEAR:
            combos: Iterable[tuple] = ((c, None, None) for c in sorted(self.costs))
        elif family is KernelFamily.RBF:
            combos = ((c, g, None) for c, g in product(sorted(self.costs), sorted(self.gammas)))
        else:
            combos = (
                (c, g, p)
                for c, g, p in product(sorted(self.costs), sorted(self.gammas), sorted(self.degrees))
            )
        return [
            KernelSpec(family, cost=c, gamma=g, degree=p, formulation=formulation)
            for c, g, p in combos
        ]


def grid_search_cv(
    train: Dataset,
    sample_fraction: float,
    grid: ParamGrid,
    folds: int = 10,
    seed: int = 0,
    families: Sequence[KernelFamily] = tuple(KernelFamily),
    formulation: Formulation = Formulation.L1,
    solver: SolverConfig | None = None,
) -> dict[KernelFamily, KernelSpec]:
    """Pick the lowest-mean-CV-error spec per kernel family.

    One stratified fraction-sample is drawn once and shared by every
    candidate; folds are stratified as well. Candidates are scanned in
    (cost, gamma, degree) order and only a strictly lower mean error
    displaces the incumbent, so ties resolve toward the smaller cost, then
    the smaller gamma. A fold whose training part is single-class is
    skipped with a warning; a candidate with no usable folds is
    disqualified.
    """
    solver = solver or SolverConfig()
    by_class = train.class_indices()
    sample_parts = []
    for label in (+1, -1):
        ids = by_class[label]
        count = round_half_up(sample_fraction * ids.size)
        if count < folds:
            raise ConfigError(
                f"class {label:+d} sample would hold {count} rows, fewer than {folds} folds"
            )
        rng = child_rng(seed, _STREAM_CV_SAMPLE, 0 if label > 0 else 1)
        sample_parts.append(np.sort(rng.choice(ids, size=count, replace=False)))

    fold_of: dict[int, int] = {}
    for part, stream in zip(sample_parts, (2, 3)):
        order = child_rng(seed, _STREAM_CV_FOLDS, stream).permutation(part.size)
        for pos, row in enumerate(part[order]):
            fold_of[int(row)] = pos % folds
    sample = np.sort(np.concatenate(sample_parts))
    fold_rows = [np.asarray([r for r in sample if fold_of[int(r)] == f], dtype=np.int64) for f in range(folds)]
    fold_sets = [take(train, rows) for rows in fold_rows]
    fold_labels = [np.asarray(ds.labels) for ds in fold_sets]
    train_rows = [np.asarray([r for r in sample if fold_of[int(r)] != f], dtype=np.int64) for f in range(folds)]

    best: dict[KernelFamily, KernelSpec] = {}
    for family in families:
        best_err = math.inf
        best_spec = None
        for spec in grid.candidates(family, formulation):
            errors = []
            for f in range(folds):
                rows = train_rows[f]
                fold_train_labels = {train.labels[int(r)] for r in rows}
                if len(fold_train_labels) < 2:
                    log.warning("fold %d is single-class for %s; skipped", f, spec.to_config())
                    continue
                model = solve(train, spec, solver, indices=rows)
                pred = classify_batch(model, fold_sets[f])
                errors.append(float(np.mean(pred != fold_labels[f])))
            if not errors:
                log.warning("candidate %s disqualified: no usable folds", spec.to_config())
                continue
            mean_err = statistics.fmean(errors)
            if mean_err < best_err:
                best_err = mean_err
                best_spec = spec
        if best_spec is None:
            raise ConfigError(f"every {family.value} candidate was disqualified")
        best[family] = best_spec
    return best


# ---------------------------------------------------------------------------
# Radius-scale sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BetaSweepResult:
    model: SvmModel
    trace: EnrichmentTrace
    timings: PhaseTimings  # phases of the best run
    beta_final: float
    total_time_s: float  # the whole sweep, every iteration included
    errors: tuple[tuple[float, float], ...]  # (beta, validation error) per iteration
    initial_sv_count: int
    capped: bool = False


def beta_sweep(
    train: Dataset,
    validation: Dataset,
    cfg: LocalSamplingConfig,
    threads: int = 1,
) -> BetaSweepResult:
    """Increase the ball-radius scale stepwise until error stops improving.

    Runs the local-sampling pipeline at beta = start, start+step, ... and
    stops at the first beta whose validation error is not lower than the
    previous one's (or at the hard cap, flagged `capped`); the returned
    model is the minimum-error iteration's. Bagging is shared across
    iterations and the reported total time covers the entire sweep.
    """
    if len(validation) == 0:
        raise ConfigError("the sweep needs a nonempty validation set")
    schedule = cfg.schedule or BetaSchedule()
    t0 = time.perf_counter()
    state = initial_bagging(train, cfg, threads=threads)
    val_labels = np.asarray(validation.labels)

    best = None
    best_err = math.inf
    prev_err = math.inf
    errors: list[tuple[float, float]] = []
    capped = True
    step_no = 0
    while True:
        beta = round(schedule.start + step_no * schedule.step, 10)
        if beta > schedule.cap + 1e-12:
            break
        run_cfg = LocalSamplingConfig(
            cfg.sample_fraction, cfg.num_bags, cfg.kernel, cfg.solver, beta, None, cfg.seed
        )
        result = local_sampling_svm(train, run_cfg, threads=threads, bagging=state)
        err = float(np.mean(classify_batch(result.model, validation) != val_labels))
        errors.append((beta, err))
        if err < best_err:
            best_err = err
            best = (beta, result)
        if err >= prev_err:
            capped = False
            break
        prev_err = err
        step_no += 1

    total = time.perf_counter() - t0
    if best is None:
        raise MarginforgeError("radius-scale sweep produced no runs")
    beta_final, result = best
    return BetaSweepResult(
        model=result.model,
        trace=result.trace,
        timings=result.timings,
        beta_final=beta_final,
        total_time_s=total,
        errors=tuple(errors),
        initial_sv_count=result.initial_sv_count,
        capped=capped,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def error_rate(model: SvmModel, test: Dataset) -> float:
    """Fraction of test rows whose predicted sign differs from the label."""
    if len(test) == 0:
        raise ConfigError("error rate over an empty test set")
    return float(np.mean(classify_batch(model, test) != np.asarray(test.labels)))


def sv_overlap(sub_model: SvmModel, full_model: SvmModel) -> tuple[int, float]:
    """(shared SV count, percentage of the full model's SVs recovered)."""
    if sub_model.training_view_id != full_model.training_view_id:
        raise ConfigError("models were trained over different datasets")
    shared = len(set(sub_model.sv_indices) & set(full_model.sv_indices))
    full = len(full_model.sv_indices)
    pct = 100.0 * shared / full if full else math.nan
    return shared, pct


def error_ratio(err_sub: float, err_full: float) -> float:
    """err_sub / err_full; NaN marks the undefined err_full = 0 case."""
    if err_sub < 0 or err_full < 0:
        raise ConfigError("error rates cannot be negative")
    if err_full == 0.0:
        return math.nan
    return err_sub / err_full


def indecision_probability(model: SvmModel, points: Dataset, eps: float) -> float:
    """Fraction of points with |decision value| strictly below eps."""
    if eps < 0:
        raise ConfigError(f"eps must be non-negative, got {eps}")
    if len(points) == 0:
        raise ConfigError("indecision probability over an empty set")
    if eps == 0.0:
        return 0.0
    return float(np.mean(np.abs(decision_values(model, points)) < eps))


def indecision_study(
    train: Dataset,
    spec: KernelSpec,
    eps_list: Sequence[float],
    n_list: Sequence[int],
    reps: int = 100,
    seed: int = 0,
    solver: SolverConfig | None = None,
    threads: int = 1,
) -> dict[float, dict[int, float]]:
    """Average indecision fraction over repeated subsample fits.

    For every subsample size, `reps` independent subsamples are drawn and
    fitted; the fraction is estimated on each subsample's own rows and
    averaged. Layout: table[eps][n].
    """
    solver = solver or SolverConfig()
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    for n in n_list:
        if not 1 <= n <= len(train):
            raise ConfigError(f"subsample size {n} out of range")

    def one(args: tuple[int, int, int]) -> list[float]:
        n_idx, n, rep = args
        rng = child_rng(seed, _STREAM_INDECISION, n_idx, rep)
        rows = np.sort(rng.choice(len(train), size=n, replace=False))
        model = solve(train, spec, solver, indices=rows)
        values = np.abs(decision_values(model, take(train, rows)))
        return [float(np.mean(values < e)) if e > 0 else 0.0 for e in eps_list]

    jobs = [(n_idx, n, rep) for n_idx, n in enumerate(n_list) for rep in range(reps)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(job) for job in jobs]

    table: dict[float, dict[int, float]] = {float(e): {} for e in eps_list}
    for n_idx, n in enumerate(n_list):
        chunk = [rows[(n_idx * reps) + r] for r in range(reps)]
        for e_idx, e in enumerate(eps_list):
            table[float(e)][int(n)] = statistics.fmean(c[e_idx] for c in chunk)
    return table


def scale_model(model: SvmModel, factor: float) -> SvmModel:
    """Divide every multiplier and the bias by factor >= 1.

    Feasibility is preserved and, because sgn(x) = sgn(x/M), so is every
    classification; decision values themselves shrink.
    """
    if factor < 1.0:
        raise ConfigError(f"scale factor must be >= 1, got {factor}")
    return SvmModel(
        model.spec,
        model.bias / factor,
        model.sv_indices,
        model.sv_labels,
        [a / factor for a in model.alphas],
        model.sv_vectors,
        model.dim,
        model.training_view_id,
        flags=model.flags,
        n_updates=model.n_updates,
        kkt_gap=model.kkt_gap,
    )


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunMetrics:
    """One benchmark run in the experiment tables' row schema."""

    sv_initial: int
    sv_final: int
    error_rate: float
    time_s: float
    sv_real: int | None = None
    pct_full_sv: float | None = None
    error_ratio: float | None = None
    pct_full_time: float | None = None
    beta_final: float | None = None
    rounds: int | None = None

    def __post_init__(self) -> None:
        if self.sv_real is not None and self.sv_real > self.sv_final:
            raise ValueError("sv_real cannot exceed sv_final")
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError(f"error rate {self.error_rate} outside [0,1]")
        for name in ("pct_full_sv", "pct_full_time"):
            value = getattr(self, name)
            if value is not None and not math.isnan(value) and value < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "sv_initial": self.sv_initial,
            "sv_final": self.sv_final,
            "sv_real": self.sv_real,
            "pct_full_sv": self.pct_full_sv,
            "error_rate": self.error_rate,
            "error_ratio": self.error_ratio,
            "time_s": self.time_s,
            "pct_full_time": self.pct_full_time,
            "beta_final": self.beta_final,
            "rounds": self.rounds,
        }


_MEAN_FIELDS = (
    "sv_initial",
    "sv_final",
    "sv_real",
    "pct_full_sv",
    "error_rate",
    "error_ratio",
    "time_s",
    "pct_full_time",
    "beta_final",
    "rounds",
)


@dataclass(frozen=True)
class AggregateReport:
    """Per-run metrics plus their means and the error's sample std dev."""

    runs: tuple[RunMetrics, ...]
    means: dict[str, float] = field(default_factory=dict)
    error_sd: float = 0.0
    flags: tuple[str, ...] = ()

    @staticmethod
    def from_runs(runs: Sequence[RunMetrics]) -> "AggregateReport":
        if not runs:
            raise ConfigError("cannot aggregate zero runs")
        means: dict[str, float] = {}
        for name in _MEAN_FIELDS:
            values = [getattr(r, name) for r in runs if getattr(r, name) is not None]
            if values:
                means[name] = statistics.fmean(values)
        flags: tuple[str, ...] = ()
        if len(runs) >= 2:
            sd = statistics.stdev(r.error_rate for r in runs)
        else:
            sd = 0.0
            flags = ("single-run",)
        return AggregateReport(tuple(runs), means, sd, flags)

    def to_dict(self) -> dict:
        return {
            "runs": [r.to_dict() for r in self.runs],
            "means": dict(self.means),
            "error_sd": self.error_sd,
            "flags": list(self.flags),
        }


def run_replications(
    experiment: Callable[[int], RunMetrics],
    reps: int = 10,
    seed: int = 0,
    threads: int = 1,
) -> AggregateReport:
    """Run the experiment on per-rep child seeds and aggregate in rep order."""
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    rep_seeds = [
        int(np.random.SeedSequence((seed, rep)).generate_state(1, dtype=np.uint64)[0])
        for rep in range(reps)
    ]
    if threads > 1 and reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(experiment, rep_seeds))
    else:
        runs = [experiment(s) for s in rep_seeds]
    return AggregateReport.from_runs(runs)
