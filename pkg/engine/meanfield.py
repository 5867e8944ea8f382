# engine/meanfield.py

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq
from scipy.special import erf, ndtr

from config import config
from engine.model import (
    DomainError,
    EnsembleParams,
    NumericalError,
    PenaltyKind,
    PenaltyModel,
    SignalPrior,
    prox,
)
from engine.quadrature import gaussian_expectation

_SQRT_2PI = np.sqrt(2.0 * np.pi)
_GRADING_REACH = 100.0

Method = Literal["auto", "quadrature", "closed_form"]


# =====================================================
# TYPES
# =====================================================

@dataclass(frozen=True)
class MeanFieldState:
    """
    Fixed-point variables of the single-variable problem.

    In the basis-pursuit limit σ_eff² and χ̄ are quoted at unit λ
    (σ_eff² = θ, χ̄ = αθ); both vanish in the recovery phase.
    """

    q: float
    chi_bar: float
    sigma_eff2: float
    sigma_xi2: float
    theta: float = 0.0

    def __post_init__(self):
        if self.q < 0 or self.chi_bar < 0 or self.sigma_eff2 < 0 or self.sigma_xi2 < 0:
            raise DomainError(f"mean-field state must be nonnegative: {self}")

    @classmethod
    def from_order_parameters(cls, q: float, chi_bar: float, params: EnsembleParams,
                              penalty: PenaltyModel) -> "MeanFieldState":
        sigma_eff2 = params.sigma2 + chi_bar / params.alpha
        theta = penalty.lam * sigma_eff2 if penalty.kind is PenaltyKind.L1 else 0.0
        return cls(
            q=q,
            chi_bar=chi_bar,
            sigma_eff2=sigma_eff2,
            sigma_xi2=q / params.alpha + params.sigma_zeta2,
            theta=theta,
        )


@dataclass(frozen=True)
class FixedPointReport:
    state: MeanFieldState
    iterations: int
    residual: float
    converged: bool
    diverged: bool = False
    active_fraction: Optional[float] = None


@dataclass(frozen=True)
class PhasePoint:
    alpha: float
    rho: float
    q: float
    chi_bar: float
    recovered: bool
    theta: float = 0.0
    sigma_xi2: float = 0.0
    converged: bool = True
    iterations: int = 0

    @property
    def chi_positive(self) -> bool:
        return self.chi_bar > 0.0

    def as_row(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": self.alpha,
            "q": self.q,
            "chi_bar": self.chi_bar,
            "theta": self.theta,
            "sigma_xi2": self.sigma_xi2,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class BoundaryPoint:
    rho: float
    alpha_c: Optional[float]
    tol_alpha: float
    alpha_c_stability: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.alpha_c is not None

    def as_row(self) -> dict:
        return {
            "rho": self.rho,
            "alpha_c": self.alpha_c,
            "alpha_c_stability": self.alpha_c_stability,
            "tol_alpha": self.tol_alpha,
        }


def recovery_tolerance(prior: SignalPrior) -> float:
    return config.RECOVERY_FACTOR * prior.second_moment


# =====================================================
# GAUSSIAN ALGEBRA
# =====================================================

def _phi(a):
    return np.exp(-0.5 * a * a) / _SQRT_2PI


def _branch_scales(sigma_xi2: float, prior: SignalPrior) -> Tuple[float, float, float, float]:
    """
    Scales of t = x0 + ξ on the two prior branches, plus the Gaussian
    regression x0 | t on the nonzero branch: x0 = c·t + N(0, v).
    """
    s0 = np.sqrt(sigma_xi2)
    s1_sq = prior.var0 + sigma_xi2
    c = prior.var0 / s1_sq
    v = prior.var0 * sigma_xi2 / s1_sq
    return s0, np.sqrt(s1_sq), c, v


def _tail(theta: float, s: float) -> float:
    """P(|t| > θ) for t ~ N(0, s²)."""
    if s == 0.0:
        return 1.0 if theta < 0 else 0.0
    return float(2.0 * ndtr(-theta / s))


def _shrink_power(theta: float, s: float) -> float:
    """E[shrink(t, θ)²] for t ~ N(0, s²)."""
    if s == 0.0:
        return 0.0
    a = theta / s
    return float(2.0 * ((s * s + theta * theta) * ndtr(-a) - theta * s * _phi(a)))


def _shrink_error(theta: float, s: float, sigma_xi2: float) -> float:
    """
    E[(shrink(t, θ) − x0)²] on the nonzero branch, t = x0 + ξ, Var t = s².

    Written as E[(η − t)²] + 2E[(η − t)ξ] + σ_ξ² so that nothing cancels
    when σ_ξ → 0.
    """
    if s == 0.0:
        return 0.0
    a = theta / s
    inside = float(erf(a / np.sqrt(2.0)))
    return float(
        theta * theta * (1.0 - inside)
        + s * s * (inside - 2.0 * a * _phi(a))
        - 2.0 * sigma_xi2 * inside
        + sigma_xi2
    )


def active_fraction(theta: float, sigma_xi2: float, prior: SignalPrior) -> float:
    """E[1{|x0 + ξ| > θ}] with ξ ~ N(0, σ_ξ²)."""
    s0, s1, _, _ = _branch_scales(sigma_xi2, prior)
    return prior.rho * _tail(theta, s1) + (1.0 - prior.rho) * _tail(theta, s0)


def _closed_form_moments(sigma_eff2: float, sigma_xi2: float, penalty: PenaltyModel,
                         prior: SignalPrior) -> Tuple[float, float]:
    s0, s1, c, v = _branch_scales(sigma_xi2, prior)
    rho = prior.rho

    if penalty.kind is PenaltyKind.L1:
        theta = penalty.lam * sigma_eff2
        q = rho * _shrink_error(theta, s1, sigma_xi2) + (1.0 - rho) * _shrink_power(theta, s0)
        chi = sigma_eff2 * active_fraction(theta, sigma_xi2, prior)
        return q, chi

    if penalty.kind is PenaltyKind.RIDGE:
        gain = 1.0 / (1.0 + penalty.lam * sigma_eff2)
        q = rho * ((gain - c) ** 2 * s1 * s1 + v) + (1.0 - rho) * gain * gain * sigma_xi2
        return q, sigma_eff2 * gain

    raise DomainError(f"no closed form for {penalty.kind.value}")


def kink_breakpoints(theta: float, penalty: PenaltyModel) -> Tuple[float, ...]:
    """
    Locations in t where the single-variable solution bends.

    The smoothed solution has complex singularities at a distance of order
    (ε²θ)^(1/3) from ±θ, so panels are graded geometrically from ε outwards
    to keep each panel within a few of its own lengths of them.
    """
    if not penalty.has_kink:
        return ()
    points = [theta, -theta]
    if penalty.kind is PenaltyKind.SMOOTHED_L1:
        offset = penalty.epsilon
        while offset < _GRADING_REACH:
            points += [theta + offset, theta - offset, -theta + offset, -theta - offset]
            offset *= 4.0
    return tuple(points)


def _quadrature_moments(sigma_eff2: float, sigma_xi2: float, penalty: PenaltyModel,
                        prior: SignalPrior) -> Tuple[float, float]:
    s0, s1, c, v = _branch_scales(sigma_xi2, prior)
    kinks = kink_breakpoints(penalty.lam * sigma_eff2, penalty)

    def nonzero_branch(t):
        x_hat, chi = prox(t, sigma_eff2, penalty)
        return np.stack([(x_hat - c * t) ** 2 + v, chi])

    def zero_branch(t):
        x_hat, chi = prox(t, sigma_eff2, penalty)
        return np.stack([x_hat * x_hat, chi])

    total = np.zeros(2)
    if prior.rho > 0:
        total += prior.rho * gaussian_expectation(nonzero_branch, s1, kinks)
    if prior.rho < 1:
        total += (1.0 - prior.rho) * gaussian_expectation(zero_branch, s0, kinks)

    return float(total[0]), float(total[1])


def quenched_moments(state: MeanFieldState, penalty: PenaltyModel, prior: SignalPrior,
                     method: Method = "auto") -> Tuple[float, float]:
    """
    (E[û²], E[χ_local]) over x0 ~ prior, ξ ~ N(0, σ_ξ²).

    ``auto`` uses the closed forms for L1 and Ridge and quadrature otherwise.
    """
    if not state.sigma_eff2 > 0:
        raise DomainError(f"sigma_eff2 must be > 0, got {state.sigma_eff2}")

    if method == "closed_form" or (method == "auto" and penalty.kind is not PenaltyKind.SMOOTHED_L1):
        return _closed_form_moments(state.sigma_eff2, state.sigma_xi2, penalty, prior)

    return _quadrature_moments(state.sigma_eff2, state.sigma_xi2, penalty, prior)


# =====================================================
# FINITE-σ FIXED POINT
# =====================================================

def default_init(params: EnsembleParams, penalty: PenaltyModel, prior: SignalPrior) -> MeanFieldState:
    """q = prior second moment, χ̄ from the Ridge formula at σ_eff² = σ²."""
    chi0 = params.sigma2 / (1.0 + penalty.lam * params.sigma2)
    return MeanFieldState.from_order_parameters(prior.second_moment, chi0, params, penalty)


def solve_fixed_point(params: EnsembleParams, penalty: PenaltyModel, prior: SignalPrior,
                      init: Optional[MeanFieldState] = None, damping: float = config.DAMPING,
                      tol: float = config.FIXED_POINT_TOL,
                      max_iter: int = config.FIXED_POINT_MAX_ITER,
                      method: Method = "auto") -> FixedPointReport:
    """
    Damped iteration of q = E[û²], χ̄ = E[χ_local] with
    σ_eff² = σ² + χ̄/α and σ_ξ² = q/α + σ_ζ² recomputed every sweep.
    """
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    if not params.sigma2 > 0:
        raise DomainError("finite-sigma mode needs sigma2 > 0; use solve_basis_pursuit_limit")

    state = init or default_init(params, penalty, prior)
    q, chi = state.q, state.chi_bar
    floor = 1e-14 * max(prior.second_moment, params.sigma2, 1e-300)
    cap = config.DIVERGENCE_FACTOR * max(prior.second_moment, params.sigma_zeta2, params.sigma2)

    residual = np.inf
    for iteration in range(1, max_iter + 1):
        state = MeanFieldState.from_order_parameters(q, chi, params, penalty)
        q_new, chi_new = quenched_moments(state, penalty, prior, method)

        residual = max(abs(q_new - q) / max(q, floor), abs(chi_new - chi) / max(chi, floor))

        if residual <= tol:
            logger.debug(f"fixed point converged in {iteration} sweeps (residual {residual:.2e})")
            return FixedPointReport(state, iteration, residual, True)

        q = (1.0 - damping) * q + damping * q_new
        chi = (1.0 - damping) * chi + damping * chi_new

        if not np.isfinite(q) or q > cap:
            logger.warning(f"fixed point diverged at sweep {iteration}: q={q:.3e}")
            state = MeanFieldState.from_order_parameters(q if np.isfinite(q) else cap, chi, params, penalty)
            return FixedPointReport(state, iteration, residual, False, diverged=True)

    logger.warning(f"fixed point not converged after {max_iter} sweeps (residual {residual:.2e})")
    state = MeanFieldState.from_order_parameters(q, chi, params, penalty)
    return FixedPointReport(state, max_iter, residual, False)


# =====================================================
# BASIS-PURSUIT LIMIT
# =====================================================

def solve_threshold(alpha: float, sigma_xi2: float, prior: SignalPrior) -> float:
    """θ such that E[1{|x0 + ξ| > θ}] = α. The active fraction decreases in θ."""
    s0, s1, _, _ = _branch_scales(sigma_xi2, prior)
    hi = 40.0 * s1

    def gap(theta):
        return active_fraction(theta, sigma_xi2, prior) - alpha

    lo_gap, hi_gap = gap(0.0), gap(hi)
    if not (lo_gap > 0 > hi_gap):
        raise NumericalError(
            "threshold root is not bracketed",
            {
                "alpha": alpha,
                "sigma_xi2": sigma_xi2,
                "rho": prior.rho,
                "bracket": (0.0, hi),
                "gap": (lo_gap, hi_gap),
            },
        )
    return float(brentq(gap, 0.0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps))


def _bp_state(q: float, alpha: float, prior: SignalPrior, sigma_zeta2: float) -> Tuple[MeanFieldState, float]:
    sigma_xi2 = q / alpha + sigma_zeta2
    theta = solve_threshold(alpha, sigma_xi2, prior)
    state = MeanFieldState(q=q, chi_bar=alpha * theta, sigma_eff2=theta, sigma_xi2=sigma_xi2, theta=theta)
    return state, active_fraction(theta, sigma_xi2, prior)


def _bp_map(q: float, alpha: float, prior: SignalPrior, sigma_zeta2: float) -> float:
    sigma_xi2 = q / alpha + sigma_zeta2
    theta = solve_threshold(alpha, sigma_xi2, prior)
    s0, s1, _, _ = _branch_scales(sigma_xi2, prior)
    return prior.rho * _shrink_error(theta, s1, sigma_xi2) + (1.0 - prior.rho) * _shrink_power(theta, s0)


def _recovered_report(iterations: int, residual: float) -> FixedPointReport:
    state = MeanFieldState(q=0.0, chi_bar=0.0, sigma_eff2=0.0, sigma_xi2=0.0, theta=0.0)
    return FixedPointReport(state, iterations, residual, True)


def solve_basis_pursuit_limit(alpha: float, prior: SignalPrior, sigma_zeta2: float = 0.0,
                              tol: float = config.FIXED_POINT_TOL, damping: float = config.DAMPING,
                              max_iter: int = config.BP_MAX_ITER,
                              init_q: Optional[float] = None) -> FixedPointReport:
    """
    σ → 0 limit in the variables (q, θ).

    θ is fixed by the active-fraction condition at every sweep; q follows
    the damped map q ← E[(shrink(x0 + ξ, θ) − x0)²].
    """
    if not 0 < alpha <= 1:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    if not 0 < prior.rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {prior.rho}")
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    if sigma_zeta2 < 0:
        raise DomainError(f"sigma_zeta2 must be >= 0, got {sigma_zeta2}")

    q_tol = recovery_tolerance(prior)

    if alpha == 1.0:
        # square system: the only feasible point is the truth
        if sigma_zeta2 == 0.0:
            return _recovered_report(0, 0.0)
        logger.warning("noisy basis pursuit at alpha=1 has no finite fixed point")
        state = MeanFieldState(q=np.inf, chi_bar=0.0, sigma_eff2=0.0, sigma_xi2=np.inf)
        return FixedPointReport(state, 0, np.inf, False, diverged=True)

    q = prior.second_moment if init_q is None else float(init_q)
    if q <= q_tol and sigma_zeta2 == 0.0:
        return _recovered_report(0, 0.0)

    cap = config.DIVERGENCE_FACTOR * max(prior.second_moment, sigma_zeta2)
    residual = np.inf

    for iteration in range(1, max_iter + 1):
        q_new = _bp_map(q, alpha, prior, sigma_zeta2)
        residual = abs(q_new - q) / max(q, q_tol)

        if residual <= tol:
            state, active = _bp_state(q_new, alpha, prior, sigma_zeta2)
            logger.debug(f"BP limit alpha={alpha:.4f}: q={q_new:.3e} after {iteration} sweeps")
            return FixedPointReport(state, iteration, residual, True, active_fraction=active)

        q = (1.0 - damping) * q + damping * q_new

        if sigma_zeta2 == 0.0 and q <= q_tol:
            logger.debug(f"BP limit alpha={alpha:.4f}: recovery after {iteration} sweeps")
            return _recovered_report(iteration, residual)

        if q > cap:
            state, active = _bp_state(q, alpha, prior, sigma_zeta2)
            return FixedPointReport(state, iteration, residual, False, diverged=True, active_fraction=active)

    logger.warning(f"BP limit alpha={alpha:.4f} not converged after {max_iter} sweeps (q={q:.3e})")
    state, active = _bp_state(q, alpha, prior, sigma_zeta2)
    return FixedPointReport(state, max_iter, residual, False, active_fraction=active)


def critical_alpha_stability(rho: float) -> float:
    """
    α at which the q = 0 fixed point of the basis-pursuit map loses stability.

    Near q = 0 the map is linear with slope
    [ρ(1+κ²) + (1−ρ)(2(1+κ²)Q(κ) − 2κφ(κ))] / α, where κ = θ/σ_ξ is set by
    ρ + 2(1−ρ)Q(κ) = α.
    """
    if not 0 < rho < 1:
        raise DomainError(f"rho must lie in (0, 1), got {rho}")

    def alpha_of(kappa):
        return rho + 2.0 * (1.0 - rho) * ndtr(-kappa)

    def excess(kappa):
        tail = ndtr(-kappa)
        gain = rho * (1 + kappa ** 2) + (1 - rho) * (2 * (1 + kappa ** 2) * tail - 2 * kappa * _phi(kappa))
        return gain - alpha_of(kappa)

    lo, hi = 1e-8, 1.0
    while excess(hi) <= 0:
        hi *= 2.0
        if hi > 1e3:
            raise NumericalError("stability root is not bracketed", {"rho": rho})
    return float(alpha_of(brentq(excess, lo, hi, xtol=1e-14)))


# =====================================================
# PHASE SCANS
# =====================================================

def phase_point(alpha: float, prior: SignalPrior, report: FixedPointReport) -> PhasePoint:
    s = report.state
    return PhasePoint(
        alpha=alpha,
        rho=prior.rho,
        q=s.q,
        chi_bar=s.chi_bar,
        recovered=s.q <= recovery_tolerance(prior),
        theta=s.theta,
        sigma_xi2=s.sigma_xi2,
        converged=report.converged,
        iterations=report.iterations,
    )


def scan_alpha(alpha_grid: Sequence[float], prior: SignalPrior, sigma_zeta2: float = 0.0,
               penalty: Optional[PenaltyModel] = None, sigma2: Optional[float] = None,
               damping: float = config.DAMPING, tol: float = config.FIXED_POINT_TOL) -> List[PhasePoint]:
    """
    Evaluate the fixed point along an α grid, warm-starting each point from
    the previous one. Without ``penalty`` the basis-pursuit limit is used.
    """
    points: List[PhasePoint] = []
    warm_q: Optional[float] = None
    warm_state: Optional[MeanFieldState] = None

    for alpha in alpha_grid:
        if penalty is None:
            report = solve_basis_pursuit_limit(alpha, prior, sigma_zeta2, tol=tol, damping=damping, init_q=warm_q)
            if report.state.q > 0 and np.isfinite(report.state.q):
                warm_q = report.state.q
        else:
            params = EnsembleParams(alpha=alpha, sigma2=sigma2, sigma_zeta2=sigma_zeta2)
            init = None
            if warm_state is not None:
                init = MeanFieldState.from_order_parameters(warm_state.q, warm_state.chi_bar, params, penalty)
            report = solve_fixed_point(params, penalty, prior, init=init, damping=damping, tol=tol)
            warm_state = report.state

        points.append(phase_point(alpha, prior, report))

    return points


def boundary_for_rho(rho: float, alpha_bracket: Tuple[float, float] = (0.05, 0.99),
                     tol_alpha: float = 1e-3, prior_var: float = 1.0,
                     sigma_zeta2: float = 0.0) -> BoundaryPoint:
    """
    Bisection on α for the disappearance of the q > 0 branch at one ρ.
    """
    prior = SignalPrior(rho=rho, var0=prior_var)
    q_tol = recovery_tolerance(prior)

    try:
        stability = critical_alpha_stability(rho)
    except NumericalError as e:
        logger.warning(f"stability estimate failed at rho={rho}: {e}")
        stability = None

    def error_branch(alpha: float, warm: Optional[float]) -> Tuple[bool, float]:
        report = solve_basis_pursuit_limit(alpha, prior, sigma_zeta2, init_q=warm)
        return report.state.q > q_tol, report.state.q

    lo, hi = alpha_bracket
    lo = max(lo, 1e-6)
    hi = min(hi, 1.0 - 1e-9)

    try:
        lo_err, warm = error_branch(lo, None)
        while not lo_err:
            lo *= 0.5
            if lo < 1e-4:
                raise NumericalError("no error phase below the bracket", {"rho": rho, "lo": lo})
            lo_err, warm = error_branch(lo, None)

        hi_err, _ = error_branch(hi, warm)
        while hi_err:
            hi = 0.5 * (hi + 1.0)
            if 1.0 - hi < 1e-6:
                raise NumericalError("no recovery phase inside (0, 1)", {"rho": rho, "hi": hi})
            hi_err, _ = error_branch(hi, warm)

        while hi - lo > tol_alpha:
            mid = 0.5 * (lo + hi)
            mid_err, q_mid = error_branch(mid, warm)
            if mid_err:
                lo, warm = mid, q_mid
            else:
                hi = mid

    except (NumericalError, DomainError) as e:
        logger.warning(f"phase boundary failed at rho={rho}: {e}")
        return BoundaryPoint(rho=rho, alpha_c=None, tol_alpha=tol_alpha,
                             alpha_c_stability=stability, error=str(e))

    alpha_c = 0.5 * (lo + hi)
    logger.info(f"rho={rho:.4f}: alpha_c={alpha_c:.4f} (stability estimate {stability})")
    return BoundaryPoint(rho=rho, alpha_c=alpha_c, tol_alpha=tol_alpha, alpha_c_stability=stability)


def check_monotone(points: Iterable[BoundaryPoint]) -> bool:
    """α_c must be nondecreasing in ρ (up to the bisection tolerance)."""
    ok = True
    previous: Optional[BoundaryPoint] = None
    for point in sorted((p for p in points if p.ok), key=lambda p: p.rho):
        if previous is not None and point.alpha_c < previous.alpha_c - point.tol_alpha:
            logger.warning(f"alpha_c not monotone: rho={previous.rho} -> {point.rho}")
            ok = False
        previous = point
    return ok


def scan_phase_boundary(rho_grid: Sequence[float], alpha_bracket: Tuple[float, float] = (0.05, 0.99),
                        tol_alpha: float = 1e-3, prior_var: float = 1.0,
                        sigma_zeta2: float = 0.0) -> List[BoundaryPoint]:
    points = [
        boundary_for_rho(rho, alpha_bracket, tol_alpha, prior_var, sigma_zeta2)
        for rho in sorted(rho_grid)
    ]
    check_monotone(points)
    return points
