# engine/lp.py

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.linalg import lu_factor, lu_solve

from config import config
from engine.model import DomainError, NumericalError


class LPIterationLimitError(NumericalError):
    """The simplex pivot count exceeded its cap."""


class LPStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


# =====================================================
# TYPES
# =====================================================

@dataclass(frozen=True)
class BasisPursuitLP:
    """min ‖x‖₁ − f·x_a  s.t.  H x = y."""

    H: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    perturb_node: Optional[int] = None
    f: float = 0.0

    def __post_init__(self):
        M, N = self.H.shape
        if self.y.shape != (M,):
            raise DomainError(f"y must have length {M}, got shape {self.y.shape}")
        if M > N:
            raise DomainError(f"basis pursuit needs M <= N, got M={M}, N={N}")
        if self.perturb_node is not None and not 0 <= self.perturb_node < N:
            raise DomainError(f"perturb_node {self.perturb_node} outside [0, {N})")
        if self.f != 0.0 and self.perturb_node is None:
            raise DomainError("a nonzero field needs a perturb_node")
        if abs(self.f) >= 1.0:
            raise DomainError(f"|f| must be < 1, got {self.f}; the cost on the perturbed node is unbounded")

    @property
    def N(self) -> int:
        return self.H.shape[1]

    @property
    def M(self) -> int:
        return self.H.shape[0]

    def with_field(self, perturb_node: Optional[int], f: float) -> "BasisPursuitLP":
        return BasisPursuitLP(self.H, self.y, perturb_node, f)

    def standard_form(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """x = x⁺ − x⁻ with columns [H, −H] and costs 1 except (1 ∓ f) on node a."""
        N = self.N
        A = np.hstack([self.H, -self.H])
        c = np.ones(2 * N)
        if self.perturb_node is not None:
            c[self.perturb_node] -= self.f
            c[N + self.perturb_node] += self.f
        return A, np.asarray(self.y, dtype=float), c


@dataclass(frozen=True)
class StandardFormResult:
    x: np.ndarray
    objective: float
    basis: Tuple[int, ...]
    status: LPStatus
    reduced_costs: np.ndarray
    iterations: int
    phase1_iterations: int


@dataclass(frozen=True)
class LPSolution:
    x_hat: np.ndarray
    objective: float
    basis: frozenset
    status: LPStatus
    reduced_costs: np.ndarray = field(repr=False)
    iterations: int = 0
    phase1_iterations: int = 0
    warm_started: bool = False

    @property
    def ok(self) -> bool:
        return self.status is LPStatus.OPTIMAL

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x_hat)


def default_feas_tol(y: np.ndarray) -> float:
    return max(1e-9 * float(np.max(np.abs(y), initial=0.0)), 1e-12)


# =====================================================
# BASIS FACTORISATION
# =====================================================

class _SingularBasis(NumericalError):
    pass


class _Basis:
    """
    Dense LU of the basis matrix plus a product-form eta file.

    B_k = B_0 E_1 ⋯ E_k where E_i is the identity with column r_i
    replaced by d_i = B_{i-1}⁻¹ a_{q_i}.
    """

    def __init__(self, A: np.ndarray, index: Sequence[int], refactor_every: int = config.LP_REFACTOR_EVERY):
        self.A = A
        self.index = list(index)
        self.refactor_every = refactor_every
        self.etas: List[Tuple[int, np.ndarray]] = []
        self.refactor()

    def refactor(self):
        B = self.A[:, self.index]
        lu, piv = lu_factor(B, check_finite=False)
        pivots = np.abs(np.diag(lu))
        if pivots.size == 0 or pivots.min() <= 1e-11 * max(pivots.max(), 1.0):
            raise _SingularBasis(f"basis matrix singular (min pivot {pivots.min() if pivots.size else 0:.2e})")
        self.lu = (lu, piv)
        self.etas = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        x = lu_solve(self.lu, v, check_finite=False)
        for r, d in self.etas:
            xr = x[r] / d[r]
            x -= d * xr
            x[r] = xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        z = np.array(v, dtype=float)
        for r, d in reversed(self.etas):
            z[r] = (z[r] - (d @ z - d[r] * z[r])) / d[r]
        return lu_solve(self.lu, z, trans=1, check_finite=False)

    def replace(self, r: int, column: int, d: np.ndarray) -> bool:
        """Swap ``column`` into row r. Returns True when the LU was rebuilt."""
        self.index[r] = column
        self.etas.append((r, d.copy()))
        if len(self.etas) >= self.refactor_every:
            self.refactor()
            return True
        return False


# =====================================================
# REVISED SIMPLEX
# =====================================================

class RevisedSimplex:
    """
    Two-phase revised simplex for min cᵀx s.t. Ax = b, x ≥ 0.

    Columns n … n+M−1 of the working matrix are phase-1 artificials
    diag(sign b). Dantzig pricing switches to Bland's rule after
    3(n + M) pivots.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray,
                 opt_tol: float = config.LP_OPT_TOL, pivot_tol: float = config.LP_PIVOT_TOL,
                 feas_tol: Optional[float] = None, max_iter: Optional[int] = None):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        c = np.asarray(c, dtype=float)
        self.M, self.n = A.shape
        if b.shape != (self.M,) or c.shape != (self.n,):
            raise DomainError(f"shape mismatch: A {A.shape}, b {b.shape}, c {c.shape}")

        signs = np.where(b < 0, -1.0, 1.0)
        self.A = np.hstack([A, np.diag(signs)])
        self.b = b
        self.c = c
        self.opt_tol = opt_tol
        self.pivot_tol = pivot_tol
        self.feas_tol = default_feas_tol(b) if feas_tol is None else feas_tol
        self.bland_after = 3 * (self.n + self.M)
        self.max_iter = max_iter or 50 * (self.n + self.M)
        self.iterations = 0
        self.warm_started = False

        self.enterable = np.ones(self.n + self.M, dtype=bool)
        self.basis: Optional[_Basis] = None
        self.x_basic: Optional[np.ndarray] = None

    # ---------------------------------------------------------------

    def _recompute_primal(self):
        self.x_basic = self.basis.ftran(self.b)

    def _start_cold(self):
        self.basis = _Basis(self.A, range(self.n, self.n + self.M))
        self.x_basic = np.abs(self.b)

    def _start_warm(self, index: Sequence[int]) -> bool:
        index = [int(j) for j in index]
        if len(index) != self.M or len(set(index)) != self.M:
            logger.warning(f"warm basis rejected: need {self.M} distinct columns, got {len(index)}")
            return False
        if any(not 0 <= j < self.n for j in index):
            logger.warning("warm basis rejected: column index out of range")
            return False
        try:
            basis = _Basis(self.A, index)
        except _SingularBasis as exc:
            logger.warning(f"warm basis rejected: {exc}")
            return False

        x_basic = basis.ftran(self.b)
        if x_basic.min() < -self.feas_tol:
            logger.warning(f"warm basis rejected: primal infeasible (min {x_basic.min():.2e})")
            return False

        self.basis = basis
        self.x_basic = np.maximum(x_basic, 0.0)
        return True

    def _price(self, costs: np.ndarray) -> Tuple[Optional[int], np.ndarray]:
        y = self.basis.btran(costs[self.basis.index])
        reduced = costs - self.A.T @ y
        reduced[self.basis.index] = 0.0

        candidates = self.enterable.copy()
        candidates[self.basis.index] = False
        improving = candidates & (reduced < -self.opt_tol)
        if not improving.any():
            return None, reduced

        if self.iterations >= self.bland_after:
            return int(np.flatnonzero(improving)[0]), reduced
        masked = np.where(improving, reduced, np.inf)
        return int(np.argmin(masked)), reduced

    def _ratio_test(self, d: np.ndarray) -> Optional[int]:
        rows = np.flatnonzero(d > self.pivot_tol)
        if rows.size == 0:
            return None
        ratios = self.x_basic[rows] / d[rows]
        best = ratios.min()
        tied = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        # ties leave by the smallest basic-variable index
        index = np.asarray(self.basis.index)
        return int(tied[np.argmin(index[tied])])

    def _pivot(self, r: int, column: int, d: np.ndarray):
        step = self.x_basic[r] / d[r]
        self.x_basic = self.x_basic - step * d
        self.x_basic[r] = step
        if self.basis.replace(r, column, d):
            self._recompute_primal()
        np.maximum(self.x_basic, 0.0, out=self.x_basic)
        self.iterations += 1

    def _iterate(self, costs: np.ndarray) -> Tuple[LPStatus, np.ndarray]:
        while True:
            if self.iterations >= self.max_iter:
                raise LPIterationLimitError(
                    "simplex iteration cap reached",
                    {"iterations": self.iterations, "n": self.n, "M": self.M},
                )

            column, reduced = self._price(costs)
            if column is None:
                return LPStatus.OPTIMAL, reduced

            d = self.basis.ftran(self.A[:, column])
            r = self._ratio_test(d)
            if r is None:
                return LPStatus.UNBOUNDED, reduced

            self._pivot(r, column, d)

    def _drive_out_artificials(self):
        """Pivot basic artificials out of the basis; redundant rows keep theirs."""
        for r in range(self.M):
            if self.basis.index[r] < self.n:
                continue
            e_r = np.zeros(self.M)
            e_r[r] = 1.0
            row = self.basis.btran(e_r) @ self.A[:, :self.n]
            row[[j for j in self.basis.index if j < self.n]] = 0.0

            column = int(np.argmax(np.abs(row)))
            if abs(row[column]) <= self.pivot_tol:
                logger.debug(f"row {r} is redundant; artificial stays basic at zero")
                continue

            d = self.basis.ftran(self.A[:, column])
            self.basis.replace(r, column, d)
            self._recompute_primal()
            np.maximum(self.x_basic, 0.0, out=self.x_basic)

    # ---------------------------------------------------------------

    def solve(self, warm_basis: Optional[Sequence[int]] = None) -> StandardFormResult:
        phase1_iterations = 0
        self.warm_started = warm_basis is not None and self._start_warm(warm_basis)

        if not self.warm_started:
            self._start_cold()
            phase1_costs = np.concatenate([np.zeros(self.n), np.ones(self.M)])
            status, _ = self._iterate(phase1_costs)
            phase1_iterations = self.iterations

            infeasibility = float(np.sum(self.x_basic[np.asarray(self.basis.index) >= self.n]))
            if status is not LPStatus.OPTIMAL or infeasibility > self.feas_tol:
                logger.debug(f"phase 1 ended with infeasibility {infeasibility:.3e}")
                return self._result(LPStatus.INFEASIBLE, np.full(self.n, np.nan), phase1_iterations)

            self._drive_out_artificials()

        # artificials never re-enter
        self.enterable[self.n:] = False
        costs = np.concatenate([self.c, np.zeros(self.M)])
        status, reduced = self._iterate(costs)

        self.basis.refactor()
        self._recompute_primal()
        return self._result(status, reduced[:self.n], phase1_iterations)

    def _result(self, status: LPStatus, reduced: np.ndarray, phase1_iterations: int) -> StandardFormResult:
        x = np.zeros(self.n)
        for r, j in enumerate(self.basis.index):
            if j < self.n:
                x[j] = max(self.x_basic[r], 0.0)
        objective = float(self.c @ x) if status is LPStatus.OPTIMAL else float("nan")
        if status is LPStatus.UNBOUNDED:
            objective = float("-inf")
        return StandardFormResult(
            x=x,
            objective=objective,
            basis=tuple(self.basis.index),
            status=status,
            reduced_costs=reduced,
            iterations=self.iterations,
            phase1_iterations=phase1_iterations,
        )


def solve_standard_form(A: np.ndarray, b: np.ndarray, c: np.ndarray,
                        basis: Optional[Sequence[int]] = None,
                        feas_tol: Optional[float] = None,
                        max_iter: Optional[int] = None) -> StandardFormResult:
    """min cᵀx s.t. Ax = b, x ≥ 0 by two-phase revised simplex."""
    return RevisedSimplex(A, b, c, feas_tol=feas_tol, max_iter=max_iter).solve(warm_basis=basis)


# =====================================================
# BASIS PURSUIT
# =====================================================

def _to_solution(problem: BasisPursuitLP, result: StandardFormResult, feas_tol: float,
                 warm: bool) -> LPSolution:
    N = problem.N
    x_hat = result.x[:N] - result.x[N:]
    status = result.status

    if status is LPStatus.OPTIMAL:
        residual = float(np.max(np.abs(problem.H @ x_hat - problem.y), initial=0.0))
        if residual > feas_tol:
            logger.warning(f"basis pursuit residual {residual:.2e} above tolerance {feas_tol:.2e}")
            status = LPStatus.INFEASIBLE

    return LPSolution(
        x_hat=x_hat,
        objective=result.objective,
        basis=frozenset(j for j in result.basis if j < 2 * N),
        status=status,
        reduced_costs=result.reduced_costs,
        iterations=result.iterations,
        phase1_iterations=result.phase1_iterations,
        warm_started=warm,
    )


def _ordered_basis(prior_basis, M: int) -> Optional[List[int]]:
    if prior_basis is None:
        return None
    ordered = sorted(int(j) for j in prior_basis)
    return ordered if len(ordered) == M else None


def solve_bp(problem: BasisPursuitLP, feas_tol: Optional[float] = None) -> LPSolution:
    """Vertex solution of the (perturbed) basis-pursuit program."""
    feas_tol = default_feas_tol(problem.y) if feas_tol is None else feas_tol
    A, b, c = problem.standard_form()
    result = RevisedSimplex(A, b, c, feas_tol=feas_tol).solve()
    logger.debug(f"basis pursuit solved cold in {result.iterations} pivots ({result.status.value})")
    return _to_solution(problem, result, feas_tol, warm=False)


def solve_bp_warm(problem: BasisPursuitLP, prior_basis, feas_tol: Optional[float] = None) -> LPSolution:
    """
    As solve_bp but phase 2 starts from ``prior_basis`` (split-column
    indices, as in LPSolution.basis). An unusable basis falls back to a
    cold start.
    """
    feas_tol = default_feas_tol(problem.y) if feas_tol is None else feas_tol
    A, b, c = problem.standard_form()
    solver = RevisedSimplex(A, b, c, feas_tol=feas_tol)

    ordered = _ordered_basis(prior_basis, problem.M)
    if ordered is None:
        logger.warning("warm basis has the wrong size; cold start")
    result = solver.solve(warm_basis=ordered)
    if ordered is not None and not solver.warm_started:
        logger.warning("warm basis unusable; solved from a cold start")
    return _to_solution(problem, result, feas_tol, warm=solver.warm_started)
