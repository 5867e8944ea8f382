# engine/finitetemp.py

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from config import config
from engine.meanfield import _branch_scales, kink_breakpoints, solve_fixed_point
from engine.model import (
    DomainError,
    EnsembleParams,
    NumericalError,
    PenaltyKind,
    PenaltyModel,
    ScalarEnv,
    SignalPrior,
    prox,
)
from engine.quadrature import composite_legendre, gaussian_expectation

_CHUNK = 256


class ThermalMoments(NamedTuple):
    mean_u: float
    var_u: float
    log_partition: float


@dataclass(frozen=True)
class ThermalState:
    beta: float
    q: float
    delta_Q: float
    sigma_eff2: float
    sigma_xi2: float
    converged: bool = True
    iterations: int = 0

    @property
    def beta_delta_q(self) -> float:
        return self.beta * self.delta_Q


@dataclass(frozen=True)
class FdtRow:
    beta: float
    q: float
    delta_Q: float
    beta_deltaQ: float
    chi_bar_ref: float
    rel_err: float

    def as_row(self) -> dict:
        return {
            "beta": self.beta,
            "q": self.q,
            "delta_Q": self.delta_Q,
            "beta_deltaQ": self.beta_deltaQ,
            "chi_bar_ref": self.chi_bar_ref,
            "rel_err": self.rel_err,
        }


def _check_beta(beta: float):
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    if beta > config.BETA_CAP:
        raise DomainError(f"beta={beta:g} above cap {config.BETA_CAP:g}; use the zero-temperature solver")


# =====================================================
# SINGLE VARIABLE
# =====================================================

def _breakpoints(beta: float, sigma_eff2: float, t: np.ndarray, penalty: PenaltyModel) -> np.ndarray:
    """
    Panel edges per row of t, all rows with the same count.

    The density in x = u + x0 is ∝ exp{−β[(x − t)²/(2σ²) + U(x)]}. Beyond
    12 thermal widths past max(t, 0) (or before min(t, 0)) it has dropped
    by e^{-72} relative to its peak.
    """
    s = np.sqrt(sigma_eff2 / beta)
    mode, _ = prox(t, sigma_eff2, penalty)

    w0 = s
    if penalty.lam > 0 and penalty.kind is not PenaltyKind.RIDGE:
        w0 = min(s, 1.0 / (beta * penalty.lam))

    lo = np.minimum(t, 0.0) - config.QUAD_SPAN * s
    hi = np.maximum(t, 0.0) + config.QUAD_SPAN * s

    columns = [lo, hi, np.zeros_like(t), mode]
    for k in (2.0, 6.0):
        columns += [mode - k * s, mode + k * s, np.full_like(t, -k * w0), np.full_like(t, k * w0)]
    if penalty.kind is PenaltyKind.SMOOTHED_L1:
        for k in (1.0, 4.0):
            columns += [np.full_like(t, -k * penalty.epsilon), np.full_like(t, k * penalty.epsilon)]

    edges = np.stack(columns, axis=1)
    edges = np.clip(edges, lo[:, None], hi[:, None])
    return np.sort(edges, axis=1)


def _thermal_rule(beta, sigma_eff2, t, penalty, order):
    edges = _breakpoints(beta, sigma_eff2, t, penalty)
    n_rows = t.size
    z, w = composite_legendre([-1.0, 1.0], order)

    half = 0.5 * np.diff(edges, axis=1)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    nodes = (mid[:, :, None] + half[:, :, None] * z[None, None, :]).reshape(n_rows, -1)
    weights = (half[:, :, None] * w[None, None, :]).reshape(n_rows, -1)

    log_p = -beta * ((nodes - t[:, None]) ** 2 / (2.0 * sigma_eff2) + penalty.value(nodes))
    shift = np.max(log_p, axis=1, keepdims=True)
    p = weights * np.exp(log_p - shift)

    z_norm = p.sum(axis=1)
    mean = (p * nodes).sum(axis=1) / z_norm
    var = (p * (nodes - mean[:, None]) ** 2).sum(axis=1) / z_norm
    log_z = np.log(z_norm) + shift[:, 0]
    return mean, var, log_z


def _thermal_many(beta: float, sigma_eff2: float, t: np.ndarray, penalty: PenaltyModel):
    """Thermal mean/variance of x and log Z for every entry of t."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    previous = None

    for order in config.QUAD_ORDERS:
        parts = [
            _thermal_rule(beta, sigma_eff2, t[i:i + _CHUNK], penalty, order)
            for i in range(0, t.size, _CHUNK)
        ]
        mean, var, log_z = (np.concatenate(p) for p in zip(*parts))

        if np.any(~np.isfinite(mean)) or np.any(~np.isfinite(var)):
            raise NumericalError("thermal quadrature produced NaN", {"beta": beta, "sigma_eff2": sigma_eff2})

        if previous is not None:
            d_mean = np.abs(mean - previous[0]) / (np.abs(mean) + np.sqrt(var) + 1e-300)
            d_var = np.abs(var - previous[1]) / (var + 1e-300)
            if max(d_mean.max(), d_var.max()) < config.THERMAL_RTOL:
                return mean, var, log_z

        previous = (mean, var, log_z)

    logger.warning(f"thermal quadrature at beta={beta:g} did not reach {config.THERMAL_RTOL:g}")
    return mean, var, log_z


def thermal_average(beta: float, env: ScalarEnv, penalty: PenaltyModel) -> ThermalMoments:
    _check_beta(beta)
    mean_x, var_x, log_z = _thermal_many(beta, env.sigma_eff2, np.array([env.center]), penalty)
    # completing the square in u leaves the constant β(ξ + σ²f)²/(2σ²)
    shift = env.center - env.x0
    log_z = float(log_z[0]) + beta * shift * shift / (2.0 * env.sigma_eff2)
    return ThermalMoments(float(mean_x[0]) - env.x0, float(var_x[0]), log_z)


def thermal_moments(beta: float, env: ScalarEnv, penalty: PenaltyModel) -> Tuple[float, float]:
    """⟨u⟩ and ⟨δu²⟩ under P(u) ∝ exp{−β[(u² − 2uξ)/(2σ_eff²) + U(x0 + u) − f·u]}."""
    moments = thermal_average(beta, env, penalty)
    return moments.mean_u, moments.var_u


# =====================================================
# SELF-CONSISTENCY
# =====================================================

def _quenched_thermal(beta: float, sigma_eff2: float, sigma_xi2: float, penalty: PenaltyModel,
                      prior: SignalPrior) -> Tuple[float, float]:
    s0, s1, c, v = _branch_scales(sigma_xi2, prior)
    theta = penalty.lam * sigma_eff2
    smear = np.sqrt(sigma_eff2 / beta)

    cuts = list(kink_breakpoints(theta, penalty))
    if penalty.has_kink:
        for k in (1.0, 4.0):
            cuts += [theta + k * smear, theta - k * smear, -theta + k * smear, -theta - k * smear]

    def nonzero_branch(t):
        mean, var, _ = _thermal_many(beta, sigma_eff2, t, penalty)
        return np.stack([(mean - c * t) ** 2 + v, var])

    def zero_branch(t):
        mean, var, _ = _thermal_many(beta, sigma_eff2, t, penalty)
        return np.stack([mean * mean, var])

    total = np.zeros(2)
    if prior.rho > 0:
        total += prior.rho * gaussian_expectation(nonzero_branch, s1, cuts)
    if prior.rho < 1:
        total += (1.0 - prior.rho) * gaussian_expectation(zero_branch, s0, cuts)
    return float(total[0]), float(total[1])


def solve_thermal_fixed_point(params: EnsembleParams, penalty: PenaltyModel, prior: SignalPrior,
                              beta: float, tol: float = 1e-11, damping: float = config.DAMPING,
                              max_iter: int = 2000,
                              init: Optional[Tuple[float, float]] = None) -> ThermalState:
    """
    Damped iteration of q = E[⟨u⟩²], ΔQ = E[⟨δu²⟩] with
    σ_eff² = σ²(1 + βΔQ/(ασ²)) and σ_ξ² = q/α + σ_ζ².

    ``init`` is an optional (q, βΔQ) starting point.
    """
    _check_beta(beta)
    if not params.sigma2 > 0:
        raise DomainError("finite-temperature cavity needs sigma2 > 0")
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")

    sigma2, alpha = params.sigma2, params.alpha
    if init is None:
        q, bdq = prior.second_moment, sigma2 / (1.0 + penalty.lam * sigma2)
    else:
        q, bdq = init
    dq = bdq / beta

    floor = 1e-14 * max(prior.second_moment, sigma2)
    cap = config.DIVERGENCE_FACTOR * max(prior.second_moment, params.sigma_zeta2, params.sigma2)

    def state(q_, dq_, converged, iterations):
        return ThermalState(
            beta=beta,
            q=q_,
            delta_Q=dq_,
            sigma_eff2=sigma2 * (1.0 + beta * dq_ / (alpha * sigma2)),
            sigma_xi2=q_ / alpha + params.sigma_zeta2,
            converged=converged,
            iterations=iterations,
        )

    residual = np.inf
    for iteration in range(1, max_iter + 1):
        current = state(q, dq, False, iteration)
        q_new, dq_new = _quenched_thermal(beta, current.sigma_eff2, current.sigma_xi2, penalty, prior)

        residual = max(abs(q_new - q) / max(q, floor), abs(dq_new - dq) / max(dq, floor / beta))
        if residual <= tol:
            logger.debug(f"thermal fixed point beta={beta:g} converged in {iteration} sweeps")
            return state(q, dq, True, iteration)

        q = (1.0 - damping) * q + damping * q_new
        dq = (1.0 - damping) * dq + damping * dq_new

        if not np.isfinite(q) or q > cap:
            logger.warning(f"thermal fixed point diverged at beta={beta:g}")
            return state(min(q, cap) if np.isfinite(q) else cap, dq, False, iteration)

    logger.warning(f"thermal fixed point beta={beta:g} not converged (residual {residual:.2e})")
    return state(q, dq, False, max_iter)


def fdt_check(params: EnsembleParams, penalty: PenaltyModel, prior: SignalPrior,
              beta_grid: Sequence[float]) -> List[FdtRow]:
    """βΔQ against the zero-temperature χ̄ along an increasing β grid."""
    betas = [float(b) for b in beta_grid]
    if not betas:
        raise DomainError("beta_grid is empty")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise DomainError(f"beta_grid must be increasing, got {betas}")

    reference = solve_fixed_point(params, penalty, prior)
    if not reference.converged:
        logger.warning("zero-temperature reference did not converge")
    chi_ref = reference.state.chi_bar

    rows: List[FdtRow] = []
    warm = (reference.state.q, chi_ref)
    for beta in betas:
        thermal = solve_thermal_fixed_point(params, penalty, prior, beta, init=warm)
        bdq = thermal.beta_delta_q
        rel_err = abs(bdq - chi_ref) / chi_ref if chi_ref > 0 else abs(bdq)
        rows.append(FdtRow(beta, thermal.q, thermal.delta_Q, bdq, chi_ref, rel_err))
        logger.info(f"beta={beta:g}: beta*dQ={bdq:.6g}, chi_bar={chi_ref:.6g}, rel_err={rel_err:.3e}")

    for a, b in zip(rows, rows[1:]):
        if b.rel_err > a.rel_err + 1e-3:
            logger.warning(f"FDT error grew from beta={a.beta:g} to beta={b.beta:g}")

    return rows
