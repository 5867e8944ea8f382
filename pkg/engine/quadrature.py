# engine/quadrature.py

from functools import lru_cache
from typing import Callable, Iterable, Sequence, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from config import config
from engine.model import NumericalError

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=16)
def _hermite_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = hermegauss(order)
    return nodes, weights / _SQRT_2PI


@lru_cache(maxsize=16)
def _legendre_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    return leggauss(order)


def composite_legendre(edges: Sequence[float], order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a Gauss–Legendre rule on each panel [edges[i], edges[i+1]]."""
    edges = np.asarray(edges, dtype=float)
    z, w = _legendre_rule(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * z[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def gaussian_rule(std: float, order: int, breakpoints: Iterable[float] = (),
                  span: float = config.QUAD_SPAN) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nodes/weights for E[g(t)], t ~ N(0, std²).

    Kink-free integrands get Gauss–Hermite. Integrands with kinks get a
    composite Gauss–Legendre rule on ±span·std split at the kinks.
    """
    limit = span * std
    cuts = sorted({float(b) for b in breakpoints if -limit < b < limit})

    if not cuts:
        z, w = _hermite_rule(order)
        return std * z, w

    nodes, weights = composite_legendre([-limit, *cuts, limit], order)
    density = np.exp(-0.5 * (nodes / std) ** 2) / (_SQRT_2PI * std)
    return nodes, weights * density


def gaussian_expectation(func: Callable[[np.ndarray], np.ndarray], std: float,
                         breakpoints: Iterable[float] = (),
                         orders: Sequence[int] = config.QUAD_ORDERS,
                         rtol: float = config.QUAD_RTOL):
    """
    E[func(t)] for t ~ N(0, std²) with order doubling until the relative
    change drops below rtol. ``func`` maps a node array to (..., n_nodes).
    """
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")

    if std == 0.0:
        return np.asarray(func(np.zeros(1)))[..., 0]

    breakpoints = tuple(breakpoints)
    previous = None
    change = np.inf

    for order in orders:
        nodes, weights = gaussian_rule(std, order, breakpoints)
        value = np.asarray(func(nodes)) @ weights

        if previous is not None:
            # entries far below the largest one are judged on an absolute scale
            scale = np.maximum(np.abs(value), 1e-14 * np.max(np.abs(value)) + 1e-300)
            change = float(np.max(np.abs(value - previous) / scale))
            if change < rtol:
                return value

        previous = value

    raise NumericalError(
        "Gaussian quadrature did not converge",
        {"std": std, "orders": tuple(orders), "relative_change": change, "breakpoints": breakpoints},
    )
