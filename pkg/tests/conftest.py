import numpy as np
import pytest

from engine.model import SignalPrior


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def prior():
    return SignalPrior(rho=0.2, var0=1.0)


def grid_argmin(objective, lo, hi, points=4001, rounds=4):
    """Nested grid search for the minimiser of a convex 1-D function."""
    for _ in range(rounds):
        x = np.linspace(lo, hi, points)
        i = int(np.argmin(objective(x)))
        step = x[1] - x[0]
        lo, hi = x[max(i - 1, 0)] - step, x[min(i + 1, points - 1)] + step
    return float(x[i])
