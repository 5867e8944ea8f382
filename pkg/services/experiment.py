# services/experiment.py

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.stats import iqr

from config import config
from engine.lp import BasisPursuitLP, LPSolution, solve_bp, solve_bp_warm
from engine.meanfield import solve_basis_pursuit_limit
from engine.model import (
    CavityError,
    DomainError,
    NumericalError,
    ProblemInstance,
    SignalPrior,
    draw_instance,
    empirical_mse,
)
from services.runner import WorkerPool
from utils.seeding import derive_seed, rng_for


class InsufficientDataError(CavityError):
    """Too few valid reports to estimate a statistic."""


# =====================================================
# TYPES
# =====================================================

@dataclass(frozen=True)
class CellFailure:
    node: int
    f: float
    message: str


@dataclass
class ResponseCurve:
    f_grid: List[float]
    node_ids: List[int]
    staircases: Dict[int, List[float]]
    avg_response: List[float]
    fitted_chi: Optional[float]
    fit_window: Tuple[float, float]

    def staircase_rows(self, seed: int) -> List[dict]:
        return [
            {"seed": seed, "node": node, "f": f, "u_a": u}
            for node in self.node_ids
            for f, u in zip(self.f_grid, self.staircases[node])
        ]

    def response_rows(self) -> List[dict]:
        return [{"f": f, "avg_response": r} for f, r in zip(self.f_grid, self.avg_response)]


@dataclass
class RuntimeStats:
    solves: int = 0
    warm_solves: int = 0
    pivots: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        # wall time stays out of exported results
        return {"solves": self.solves, "warm_solves": self.warm_solves, "pivots": self.pivots}


@dataclass
class ExperimentReport:
    seed: int
    N: int
    M: int
    K: int
    mse_empirical: float
    response: ResponseCurve
    runtime: RuntimeStats = field(default_factory=RuntimeStats)
    failures: List[CellFailure] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    @property
    def instance_meta(self) -> dict:
        return {"seed": self.seed, "N": self.N, "M": self.M, "K": self.K}

    def summary_row(self) -> dict:
        return {
            **self.instance_meta,
            "mse_empirical": self.mse_empirical,
            "fitted_chi": self.response.fitted_chi,
            "n_fail": len(self.failures),
        }

    def to_dict(self) -> dict:
        return {
            "instance": self.instance_meta,
            "mse_empirical": self.mse_empirical,
            "fitted_chi": self.response.fitted_chi,
            "fit_window": list(self.response.fit_window),
            "f_grid": self.response.f_grid,
            "node_ids": self.response.node_ids,
            "avg_response": self.response.avg_response,
            "staircases": {str(k): v for k, v in self.response.staircases.items()},
            "runtime": self.runtime.to_dict(),
            "failures": [vars(f) for f in self.failures],
        }


@dataclass(frozen=True)
class MsePoint:
    alpha: float
    mse_median: float
    mse_iqr: float
    q_meanfield: float
    n_fail: int

    def as_row(self) -> dict:
        return {
            "alpha": self.alpha,
            "mse_median": self.mse_median,
            "mse_iqr": self.mse_iqr,
            "q_meanfield": self.q_meanfield,
            "n_fail": self.n_fail,
        }


# =====================================================
# GRID + FIT
# =====================================================

def default_f_grid(f_min: float = config.F_GRID_MIN, f_max: float = config.F_GRID_MAX,
                   points: int = config.F_GRID_POINTS) -> List[float]:
    """0 plus ±(points−1)/2 log-spaced magnitudes in [f_min, f_max]."""
    if points < 3 or points % 2 == 0:
        raise DomainError(f"points must be odd and >= 3, got {points}")
    magnitudes = np.logspace(np.log10(f_min), np.log10(f_max), (points - 1) // 2)
    return [float(f) for f in np.concatenate([-magnitudes[::-1], [0.0], magnitudes])]


def _check_grid(f_grid: Sequence[float]) -> List[float]:
    grid = sorted({float(f) for f in f_grid})
    if 0.0 not in grid:
        raise DomainError("f_grid must contain 0")
    if any(abs(f) >= 1.0 for f in grid):
        raise DomainError("f_grid entries must satisfy |f| < 1")
    return grid


def fit_response_slope(f_grid: Sequence[float], response: Sequence[float],
                       window: float = config.FIT_WINDOW, min_per_side: int = 3) -> Optional[float]:
    """
    Least-squares slope through the origin over 0 < |f| ≤ window.

    None unless both sides of 0 hold at least ``min_per_side`` finite points.
    """
    f = np.asarray(f_grid, dtype=float)
    r = np.asarray(response, dtype=float)
    use = (np.abs(f) <= window) & (f != 0.0) & np.isfinite(r)
    if np.count_nonzero(use & (f > 0)) < min_per_side or np.count_nonzero(use & (f < 0)) < min_per_side:
        return None
    f, r = f[use], r[use]
    return float(f @ r / (f @ f))


# =====================================================
# RESPONSE EXPERIMENT
# =====================================================

def _chain(problem: BasisPursuitLP, node: int, fields: Sequence[float], start: LPSolution,
           stats: RuntimeStats, failures: List[CellFailure]) -> Dict[float, float]:
    """x̂_a along ``fields`` walking away from f = 0, warm-starting each LP from the last one."""
    values: Dict[float, float] = {}
    basis = start.basis
    for f in fields:
        try:
            solution = solve_bp_warm(problem.with_field(node, f), basis)
            stats.solves += 1
            stats.warm_solves += int(solution.warm_started)
            stats.pivots += solution.iterations
            if not solution.ok:
                raise NumericalError(f"LP status {solution.status.value}")
        except CavityError as e:
            failures.append(CellFailure(node, f, str(e)))
            values[f] = float("nan")
            continue
        values[f] = float(solution.x_hat[node])
        basis = solution.basis
    return values


def run_response_experiment(instance: ProblemInstance, f_grid: Optional[Sequence[float]] = None,
                            node_sample: Optional[int] = config.NODE_SAMPLE, seed: int = 0,
                            fit_window: float = config.FIT_WINDOW,
                            workers: Optional[int] = None) -> ExperimentReport:
    """
    Staircase responses u_a(f) for a sample of nodes, one LP per (a, f),
    and the slope of their average near f = 0.

    ``node_sample=None`` perturbs every node.
    """
    if instance.noise_var != 0:
        raise DomainError("response experiment needs a noiseless instance")

    started = time.perf_counter()
    grid = _check_grid(default_f_grid() if f_grid is None else f_grid)
    problem = BasisPursuitLP(instance.H, instance.y)

    base = solve_bp(problem)
    if not base.ok:
        raise NumericalError(f"unperturbed basis pursuit failed: {base.status.value}", {"seed": instance.seed})

    N = instance.N
    if node_sample is None or node_sample >= N:
        nodes = list(range(N))
    else:
        nodes = sorted(int(a) for a in rng_for(seed, 1).choice(N, size=node_sample, replace=False))

    positive = [f for f in grid if f > 0]
    negative = [f for f in reversed(grid) if f < 0]

    def run_node(node: int):
        stats = RuntimeStats()
        failures: List[CellFailure] = []
        values = {0.0: float(base.x_hat[node])}
        values.update(_chain(problem, node, positive, base, stats, failures))
        values.update(_chain(problem, node, negative, base, stats, failures))
        u = [values[f] - instance.x0[node] for f in grid]
        return u, stats, failures

    outcomes = WorkerPool(workers).map(run_node, nodes)

    staircases: Dict[int, List[float]] = {}
    stats = RuntimeStats(solves=1, pivots=base.iterations)
    failures: List[CellFailure] = []
    for outcome in outcomes:
        if not outcome.ok:
            failures += [CellFailure(outcome.item, f, str(outcome.error)) for f in grid]
            staircases[outcome.item] = [float("nan")] * len(grid)
            continue
        u, node_stats, node_failures = outcome.value
        staircases[outcome.item] = [float(v) for v in u]
        stats.solves += node_stats.solves
        stats.warm_solves += node_stats.warm_solves
        stats.pivots += node_stats.pivots
        failures += node_failures

    zero = grid.index(0.0)
    shifts = np.array([np.asarray(staircases[a]) - staircases[a][zero] for a in nodes])
    with np.errstate(invalid="ignore"):
        avg = np.nanmean(shifts, axis=0) if shifts.size else np.zeros(len(grid))
    avg[zero] = 0.0

    response = ResponseCurve(
        f_grid=grid,
        node_ids=nodes,
        staircases=staircases,
        avg_response=[float(v) for v in avg],
        fitted_chi=fit_response_slope(grid, avg, fit_window),
        fit_window=(-fit_window, fit_window),
    )

    stats.wall_time_s = time.perf_counter() - started
    report = ExperimentReport(
        seed=instance.seed,
        N=N,
        M=instance.M,
        K=instance.K,
        mse_empirical=empirical_mse(base.x_hat, instance.x0),
        response=response,
        runtime=stats,
        failures=failures,
    )
    logger.info(
        f"instance seed={instance.seed}: mse={report.mse_empirical:.3e}, chi={response.fitted_chi}, "
        f"{stats.solves} LPs in {stats.wall_time_s:.1f}s, {len(failures)} failed cells"
    )
    return report


def estimate_empirical_chi(reports: Sequence[ExperimentReport]) -> Tuple[float, float]:
    """Mean and standard error of the per-instance fitted slopes."""
    values = np.array([r.response.fitted_chi for r in reports if r.response.fitted_chi is not None])
    if values.size < 2:
        raise InsufficientDataError(f"need at least 2 fitted reports, got {values.size}")
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def pooled_fit_chi(reports: Sequence[ExperimentReport],
                   fit_window: Optional[float] = None) -> Optional[float]:
    """Slope of the instance-averaged Δu(f)."""
    if not reports:
        raise InsufficientDataError("no reports to pool")
    grid = reports[0].response.f_grid
    if any(r.response.f_grid != grid for r in reports):
        raise DomainError("reports use different f grids")
    window = fit_window if fit_window is not None else reports[0].response.fit_window[1]
    pooled = np.mean([r.response.avg_response for r in reports], axis=0)
    return fit_response_slope(grid, pooled, window)


# =====================================================
# MSE SWEEP
# =====================================================

def mse_sweep(alpha_grid: Sequence[float], rho: float, N: int, instances_per_point: int, seed: int,
              var0: float = 1.0, workers: Optional[int] = None) -> List[MsePoint]:
    """Median/IQR of the basis-pursuit MSE over random instances next to the mean-field q."""
    prior = SignalPrior(rho=rho, var0=var0)
    points: List[MsePoint] = []

    for i, alpha in enumerate(alpha_grid):
        M = int(round(alpha * N))
        if not 1 <= M <= N:
            raise DomainError(f"alpha={alpha} gives M={M} outside [1, {N}]")

        def solve_one(j: int) -> float:
            instance = draw_instance(N, M, prior, 0.0, derive_seed(seed, 2, i, j))
            solution = solve_bp(BasisPursuitLP(instance.H, instance.y))
            if not solution.ok:
                raise NumericalError(f"LP status {solution.status.value}", {"seed": instance.seed})
            return empirical_mse(solution.x_hat, instance.x0)

        outcomes = WorkerPool(workers).map(solve_one, range(instances_per_point))
        mse = np.array([o.value for o in outcomes if o.ok])
        n_fail = sum(not o.ok for o in outcomes)

        q = solve_basis_pursuit_limit(alpha, prior).state.q
        point = MsePoint(
            alpha=float(alpha),
            mse_median=float(np.median(mse)) if mse.size else float("nan"),
            mse_iqr=float(iqr(mse)) if mse.size else float("nan"),
            q_meanfield=float(q),
            n_fail=n_fail,
        )
        logger.info(f"alpha={alpha:.3f}: median mse={point.mse_median:.3e}, q={q:.3e}, {n_fail} failed")
        points.append(point)

    return points
