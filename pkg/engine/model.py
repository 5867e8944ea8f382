# engine/model.py

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from config import config


# =====================================================
# ERRORS
# =====================================================

class CavityError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CavityError, ValueError):
    """A precondition on the inputs does not hold."""


class NumericalError(CavityError, ArithmeticError):
    """A numerical routine failed to converge or to bracket a root."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# =====================================================
# PENALTY
# =====================================================

class PenaltyKind(str, Enum):
    L1 = "l1"
    SMOOTHED_L1 = "smoothed_l1"
    RIDGE = "ridge"


@dataclass(frozen=True)
class PenaltyModel:
    """
    Separable penalty U(x).

    ✔ L1:          U(x) = λ|x|
    ✔ SmoothedL1:  U(x) = λ√(x² + ε²)
    ✔ Ridge:       U(x) = (λ/2)x²
    """

    kind: PenaltyKind
    lam: float
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DomainError(f"penalty strength must be >= 0, got {self.lam}")
        if self.kind is PenaltyKind.SMOOTHED_L1:
            if self.epsilon is None or not self.epsilon > 0:
                raise DomainError(f"smoothed L1 needs epsilon > 0, got {self.epsilon}")

    @classmethod
    def l1(cls, lam: float) -> "PenaltyModel":
        return cls(PenaltyKind.L1, float(lam))

    @classmethod
    def smoothed_l1(cls, lam: float, epsilon: float) -> "PenaltyModel":
        return cls(PenaltyKind.SMOOTHED_L1, float(lam), float(epsilon))

    @classmethod
    def ridge(cls, lam: float) -> "PenaltyModel":
        return cls(PenaltyKind.RIDGE, float(lam))

    @property
    def is_smooth(self) -> bool:
        return self.kind is not PenaltyKind.L1

    @property
    def has_kink(self) -> bool:
        # the smoothed penalty is C2 but bends on the scale epsilon around 0
        return self.kind is not PenaltyKind.RIDGE and self.lam > 0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is PenaltyKind.L1:
            return self.lam * np.abs(x)
        if self.kind is PenaltyKind.SMOOTHED_L1:
            return self.lam * np.sqrt(x * x + self.epsilon ** 2)
        return 0.5 * self.lam * x * x

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is PenaltyKind.L1:
            return self.lam * np.sign(x)
        if self.kind is PenaltyKind.SMOOTHED_L1:
            return self.lam * x / np.sqrt(x * x + self.epsilon ** 2)
        return self.lam * x

    def curvature(self, x):
        """U''(x). Undefined (reported as +inf) at the L1 kink."""
        x = np.asarray(x, dtype=float)
        if self.kind is PenaltyKind.L1:
            return np.where(x == 0.0, np.inf, 0.0)
        if self.kind is PenaltyKind.SMOOTHED_L1:
            eps2 = self.epsilon ** 2
            return self.lam * eps2 / (x * x + eps2) ** 1.5
        return np.full_like(x, self.lam)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "lam": self.lam, "epsilon": self.epsilon}


# =====================================================
# ENSEMBLE
# =====================================================

@dataclass(frozen=True)
class SignalPrior:
    """Bernoulli–Gaussian signal: nonzero with probability rho, nonzeros ~ N(0, var0)."""

    rho: float
    var0: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.var0 > 0:
            raise DomainError(f"var0 must be > 0, got {self.var0}")

    @property
    def second_moment(self) -> float:
        return self.rho * self.var0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        support = rng.random(n) < self.rho
        values = rng.normal(0.0, np.sqrt(self.var0), size=n)
        return np.where(support, values, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"rho": self.rho, "var0": self.var0}


@dataclass(frozen=True)
class EnsembleParams:
    alpha: float
    sigma2: float
    sigma_zeta2: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError(f"alpha must be > 0, got {self.alpha}")
        if self.sigma2 < 0 or self.sigma_zeta2 < 0:
            raise DomainError("sigma2 and sigma_zeta2 must be >= 0")


# =====================================================
# SCALAR EFFECTIVE PROBLEM
# =====================================================

@dataclass(frozen=True)
class ScalarEnv:
    sigma_eff2: float
    xi: float
    x0: float
    f: float = 0.0

    def __post_init__(self):
        if not self.sigma_eff2 > 0:
            raise DomainError(f"sigma_eff2 must be > 0, got {self.sigma_eff2}")

    @property
    def center(self) -> float:
        """Location of the quadratic part in x-coordinates: x0 + ξ + σ_eff² f."""
        return self.x0 + self.xi + self.sigma_eff2 * self.f


@dataclass(frozen=True)
class ScalarResult:
    u_hat: float
    x_hat: float
    chi_local: float


def shrink(t, theta):
    """Soft threshold sign(t)·max(|t| − θ, 0)."""
    t = np.asarray(t, dtype=float)
    return np.sign(t) * np.maximum(np.abs(t) - theta, 0.0)


def _smoothed_prox(t: np.ndarray, sigma_eff2: float, lam: float, eps: float,
                   tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """
    Safeguarded Newton for x − t + σ²λx/√(x²+ε²) = 0, vectorised over t.

    The residual is increasing in x and changes sign on [t − λσ², t + λσ²].
    """
    shift = lam * sigma_eff2
    lo = t - shift
    hi = t + shift
    x = shrink(t, shift)
    eps2 = eps * eps

    for _ in range(max_iter):
        root = np.sqrt(x * x + eps2)
        g = (x - t) / sigma_eff2 + lam * x / root

        done = np.abs(g) * sigma_eff2 <= tol * np.maximum(1.0, np.abs(t))
        if np.all(done):
            return x

        dg = 1.0 / sigma_eff2 + lam * eps2 / root ** 3
        lo = np.where(g < 0, x, lo)
        hi = np.where(g > 0, x, hi)

        step = x - g / dg
        # landing on a bracket end is fine, only a strict exit bisects
        outside = (step < lo) | (step > hi)
        x = np.where(done, x, np.where(outside, 0.5 * (lo + hi), step))

    logger.warning("Smoothed-L1 prox hit its Newton cap; returning bracketed estimate")
    return x


def prox(t, sigma_eff2: float, penalty: PenaltyModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised minimiser of (x − t)²/(2σ²) + U(x).

    Returns (x̂, χ_local) with χ_local = dx̂/dt·σ².
    """
    if not sigma_eff2 > 0:
        raise DomainError(f"sigma_eff2 must be > 0, got {sigma_eff2}")

    t = np.asarray(t, dtype=float)

    if penalty.kind is PenaltyKind.L1:
        theta = penalty.lam * sigma_eff2
        active = np.abs(t) > theta  # ties go to the zero branch
        x_hat = np.where(active, shrink(t, theta), 0.0)
        chi = np.where(active, sigma_eff2, 0.0)
        return x_hat, chi

    if penalty.kind is PenaltyKind.RIDGE:
        gain = 1.0 / (1.0 + penalty.lam * sigma_eff2)
        return gain * t, np.full_like(t, sigma_eff2 * gain)

    x_hat = _smoothed_prox(t, sigma_eff2, penalty.lam, penalty.epsilon)
    chi = 1.0 / (penalty.curvature(x_hat) + 1.0 / sigma_eff2)
    return x_hat, chi


def scalar_minimize(env: ScalarEnv, penalty: PenaltyModel) -> ScalarResult:
    """
    Global minimiser of (u² − 2ξu)/(2σ_eff²) + U(u + x0) − f·u.
    """
    x_hat, chi = prox(env.center, env.sigma_eff2, penalty)
    x_hat = float(x_hat)
    return ScalarResult(
        u_hat=x_hat - env.x0,
        x_hat=x_hat,
        chi_local=float(chi),
    )


def scalar_objective(u, env: ScalarEnv, penalty: PenaltyModel):
    u = np.asarray(u, dtype=float)
    return (u * u - 2.0 * env.xi * u) / (2.0 * env.sigma_eff2) + penalty.value(u + env.x0) - env.f * u


# =====================================================
# PROBLEM INSTANCES
# =====================================================

@dataclass(frozen=True)
class ProblemInstance:
    N: int
    M: int
    seed: int
    prior: SignalPrior
    noise_var: float
    H: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return int(np.count_nonzero(self.x0))

    @property
    def alpha(self) -> float:
        return self.M / self.N

    def to_dict(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "M": self.M,
            "seed": self.seed,
            "prior": self.prior.to_dict(),
            "noise_var": self.noise_var,
            "H": np.ascontiguousarray(self.H).ravel().tolist(),
            "x0": self.x0.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProblemInstance":
        N, M = int(data["N"]), int(data["M"])
        return cls(
            N=N,
            M=M,
            seed=int(data["seed"]),
            prior=SignalPrior(**data["prior"]),
            noise_var=float(data["noise_var"]),
            H=np.asarray(data["H"], dtype=np.float64).reshape(M, N),
            x0=np.asarray(data["x0"], dtype=np.float64),
            y=np.asarray(data["y"], dtype=np.float64),
        )

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest exact round-trip form
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ProblemInstance":
        return cls.from_dict(json.loads(text))


def draw_instance(N: int, M: int, prior: SignalPrior, noise_var: float, seed: int) -> ProblemInstance:
    """One quenched draw: H ~ N(0, 1/M) i.i.d., Bernoulli–Gaussian x0, y = H x0 + ζ."""
    if N < 1 or M < 1:
        raise DomainError(f"N and M must be positive, got N={N}, M={M}")
    if N > config.MAX_DIM or M > config.MAX_DIM:
        raise DomainError(f"instance too large: N={N}, M={M}, cap {config.MAX_DIM}")
    if noise_var < 0:
        raise DomainError(f"noise_var must be >= 0, got {noise_var}")

    rng = np.random.default_rng(seed)

    H = rng.standard_normal((M, N)) / np.sqrt(M)
    x0 = prior.sample(N, rng)
    y = H @ x0
    if noise_var > 0:
        y = y + rng.normal(0.0, np.sqrt(noise_var), size=M)

    return ProblemInstance(
        N=N, M=M, seed=int(seed), prior=prior, noise_var=float(noise_var),
        H=H, x0=x0, y=y,
    )


def empirical_mse(x_hat: np.ndarray, x0: np.ndarray) -> float:
    diff = np.asarray(x_hat) - np.asarray(x0)
    return float(diff @ diff) / diff.size
