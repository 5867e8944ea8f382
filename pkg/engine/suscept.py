# engine/suscept.py

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from engine.model import (
    DomainError,
    NumericalError,
    PenaltyKind,
    PenaltyModel,
    SignalPrior,
    draw_instance,
)
from utils.seeding import derive_seed


class SingularSusceptibilityError(NumericalError):
    """The Hessian HᵀH/σ² + diag(W) is not positive definite."""


# =====================================================
# TYPES
# =====================================================

@dataclass(frozen=True)
class SusceptibilityReport:
    seed: int
    N: int
    M: int
    chi_matrix_diag_mean: float
    chi_bar_resummed: float
    offdiag_rms: float
    self_energy: float
    trace_identity_lhs: float
    trace_identity_rhs: float

    @property
    def diag_rel_err(self) -> float:
        return abs(self.chi_matrix_diag_mean - self.chi_bar_resummed) / self.chi_bar_resummed

    @property
    def trace_rel_err(self) -> float:
        return abs(self.trace_identity_lhs - self.trace_identity_rhs) / self.trace_identity_rhs

    def as_row(self) -> dict:
        return {
            "seed": self.seed,
            "N": self.N,
            "M": self.M,
            "diag_mean": self.chi_matrix_diag_mean,
            "chi_bar_resummed": self.chi_bar_resummed,
            "offdiag_rms": self.offdiag_rms,
            "trace_lhs": self.trace_identity_lhs,
            "trace_rhs": self.trace_identity_rhs,
        }


@dataclass
class AppendixCheck:
    """Per-seed reports plus the pooled summary."""

    summary: SusceptibilityReport
    per_seed: List[SusceptibilityReport] = field(default_factory=list)
    skipped: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class SmoothOptimum:
    x_hat: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


# =====================================================
# LINEAR ALGEBRA
# =====================================================

def _hessian(H: np.ndarray, W_diag: np.ndarray, sigma2: float) -> np.ndarray:
    A = H.T @ H / sigma2
    A[np.diag_indices_from(A)] += W_diag
    return A


def exact_chi(H: np.ndarray, W_diag: np.ndarray, sigma2: float) -> np.ndarray:
    """χ = (HᵀH/σ² + diag(W))⁻¹ by Cholesky."""
    H = np.asarray(H, dtype=float)
    W_diag = np.asarray(W_diag, dtype=float)
    N = H.shape[1]

    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be > 0, got {sigma2}")
    if W_diag.shape != (N,):
        raise DomainError(f"W_diag must have length {N}, got shape {W_diag.shape}")
    if np.any(W_diag < 0) or not np.all(np.isfinite(W_diag)):
        raise DomainError("W_diag entries must be finite and >= 0")

    A = _hessian(H, W_diag, sigma2)
    try:
        factor = cho_factor(A, lower=True)
    except LinAlgError as exc:
        raise SingularSusceptibilityError(
            "susceptibility Hessian is singular",
            {"N": N, "min_W": float(W_diag.min()), "null_tolerance": 0.0},
        ) from exc

    chi = cho_solve(factor, np.eye(N))
    chi = 0.5 * (chi + chi.T)

    residual = float(np.max(np.abs(A @ chi - np.eye(N))))
    if residual > 1e-8 * N:
        raise SingularSusceptibilityError(
            "susceptibility Hessian is numerically singular",
            {"N": N, "residual": residual, "null_tolerance": 1e-8 * N},
        )
    return chi


def resummed_chi_bar(W_sample, alpha: float, sigma2: float, damping: float = 0.5,
                     tol: float = 1e-12, max_iter: int = 10000) -> float:
    """
    Fixed point of χ̄ = E_w[(w + 1/(σ² + χ̄/α))⁻¹] by damped iteration from χ̄ = σ².

    ``sigma2`` may be ``np.inf`` (no data term).
    """
    w = np.asarray(W_sample, dtype=float).ravel()
    if w.size == 0:
        raise DomainError("W_sample is empty")
    if np.any(w <= 0):
        raise DomainError("W_sample entries must be > 0")
    if not alpha > 0 or not sigma2 > 0:
        raise DomainError("alpha and sigma2 must be > 0")
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")

    def update(chi):
        return float(np.mean(1.0 / (w + 1.0 / (sigma2 + chi / alpha))))

    chi = sigma2 if np.isfinite(sigma2) else update(0.0)
    for iteration in range(1, max_iter + 1):
        target = update(chi)
        if abs(target - chi) <= tol * max(chi, 1e-300):
            logger.debug(f"resummed chi_bar converged in {iteration} sweeps")
            return target
        chi = (1.0 - damping) * chi + damping * target

    raise NumericalError(
        "resummed susceptibility did not converge",
        {"alpha": alpha, "sigma2": sigma2, "last": chi, "max_iter": max_iter},
    )


def self_energy(chi: np.ndarray, M: int, sigma2: float) -> float:
    """Σ = −(1/σ²)/(1 + Trχ/(Mσ²))."""
    return -(1.0 / sigma2) / (1.0 + float(np.trace(chi)) / (M * sigma2))


# =====================================================
# SMOOTH OPTIMUM
# =====================================================

def _cost(H, y, x, penalty, sigma2):
    r = y - H @ x
    return float(r @ r) / (2.0 * sigma2) + float(np.sum(penalty.value(x)))


def minimize_smooth_cost(H: np.ndarray, y: np.ndarray, penalty: PenaltyModel, sigma2: float,
                         x_init: Optional[np.ndarray] = None, tol: float = 1e-10,
                         max_iter: int = 500) -> SmoothOptimum:
    """
    Damped Newton with Armijo backtracking on ‖y − Hx‖²/(2σ²) + Σ U(x_a).

    Stops when ‖∇‖∞ ≤ tol·max(1, ‖∇(x_init)‖∞).
    """
    if not penalty.is_smooth:
        raise DomainError("Newton minimisation needs a smooth penalty")
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be > 0, got {sigma2}")

    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    gram = H.T @ H / sigma2
    hty = H.T @ y / sigma2

    x = np.zeros(H.shape[1]) if x_init is None else np.array(x_init, dtype=float)
    grad = gram @ x - hty + penalty.derivative(x)
    scale = max(1.0, float(np.max(np.abs(grad))))
    cost = _cost(H, y, x, penalty, sigma2)

    for iteration in range(1, max_iter + 1):
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol * scale:
            return SmoothOptimum(x, grad_norm, iteration - 1, True)

        A = gram.copy()
        A[np.diag_indices_from(A)] += penalty.curvature(x)
        step = -cho_solve(cho_factor(A, lower=True), grad)

        slope = float(grad @ step)
        t = 1.0
        while True:
            trial = x + t * step
            trial_cost = _cost(H, y, trial, penalty, sigma2)
            if trial_cost <= cost + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5

        x, cost = trial, trial_cost
        grad = gram @ x - hty + penalty.derivative(x)

    grad_norm = float(np.max(np.abs(grad)))
    logger.warning(f"Newton stopped after {max_iter} steps with |grad|={grad_norm:.2e}")
    return SmoothOptimum(x, grad_norm, max_iter, grad_norm <= tol * scale)


# =====================================================
# FINITE-N CHECK
# =====================================================

def _offdiag_rms(chi: np.ndarray) -> float:
    N = chi.shape[0]
    off = chi - np.diag(np.diag(chi))
    return float(np.sqrt(np.sum(off * off) / (N * (N - 1))))


def _seed_report(seed, H, chi, W_diag, sigma2) -> SusceptibilityReport:
    M, N = H.shape
    alpha = M / N
    diag_mean = float(np.mean(np.diag(chi)))
    trace_lhs = float(np.sum((H.T @ H) * chi))
    trace_rhs = M * sigma2 * diag_mean / (alpha * sigma2 + diag_mean)
    return SusceptibilityReport(
        seed=seed,
        N=N,
        M=M,
        chi_matrix_diag_mean=diag_mean,
        chi_bar_resummed=resummed_chi_bar(W_diag, alpha, sigma2),
        offdiag_rms=_offdiag_rms(chi),
        self_energy=self_energy(chi, M, sigma2),
        trace_identity_lhs=trace_lhs,
        trace_identity_rhs=trace_rhs,
    )


def verify_appendix_a(N: int, M: int, penalty: PenaltyModel, prior: SignalPrior, seeds: int,
                      sigma2: float, base_seed: int = 0) -> AppendixCheck:
    """
    Exact χ against the resummed χ̄ and the trace identity on ``seeds``
    independent instances drawn from ``base_seed``.
    """
    if not penalty.is_smooth:
        raise DomainError("susceptibility matrix needs a smooth penalty (SmoothedL1 or Ridge)")
    if penalty.kind is PenaltyKind.RIDGE and not penalty.lam > 0:
        raise DomainError("Ridge needs lam > 0 for a positive W")
    if seeds < 1:
        raise DomainError(f"seeds must be >= 1, got {seeds}")
    if N < 2:
        raise DomainError(f"N must be >= 2, got {N}")

    per_seed: List[SusceptibilityReport] = []
    skipped: List[int] = []
    pooled_w: List[np.ndarray] = []

    for index in range(seeds):
        seed = derive_seed(base_seed, index)
        instance = draw_instance(N, M, prior, 0.0, seed)

        optimum = minimize_smooth_cost(instance.H, instance.y, penalty, sigma2)
        if not optimum.converged:
            logger.warning(f"seed {seed}: optimiser did not converge, skipped")
            skipped.append(seed)
            continue

        W_diag = penalty.curvature(optimum.x_hat)
        try:
            chi = exact_chi(instance.H, W_diag, sigma2)
        except SingularSusceptibilityError as exc:
            logger.warning(f"seed {seed}: {exc}, skipped")
            skipped.append(seed)
            continue

        report = _seed_report(seed, instance.H, chi, W_diag, sigma2)
        per_seed.append(report)
        pooled_w.append(W_diag)
        logger.debug(f"seed {seed}: diag={report.chi_matrix_diag_mean:.6g}, "
                     f"resummed={report.chi_bar_resummed:.6g}")

    if not per_seed:
        raise NumericalError("every seed failed", {"skipped": skipped})

    alpha = M / N
    diag_mean = float(np.mean([r.chi_matrix_diag_mean for r in per_seed]))
    summary = replace(
        per_seed[0],
        seed=int(base_seed),
        chi_matrix_diag_mean=diag_mean,
        chi_bar_resummed=resummed_chi_bar(np.concatenate(pooled_w), alpha, sigma2),
        offdiag_rms=float(np.sqrt(np.mean([r.offdiag_rms ** 2 for r in per_seed]))),
        self_energy=float(np.mean([r.self_energy for r in per_seed])),
        trace_identity_lhs=float(np.mean([r.trace_identity_lhs for r in per_seed])),
        trace_identity_rhs=float(np.mean([r.trace_identity_rhs for r in per_seed])),
    )

    logger.info(
        f"N={N}, M={M}: diag rel err {summary.diag_rel_err:.3e}, "
        f"trace rel err {summary.trace_rel_err:.3e}, {len(skipped)} skipped"
    )
    return AppendixCheck(summary=summary, per_seed=per_seed, skipped=skipped)
