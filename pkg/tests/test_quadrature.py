import numpy as np
import pytest

from engine.model import NumericalError, shrink
from engine.quadrature import composite_legendre, gaussian_expectation, gaussian_rule


def test_hermite_moments():
    std = 1.7
    assert gaussian_expectation(lambda t: t * t, std) == pytest.approx(std ** 2, rel=1e-12)
    assert gaussian_expectation(lambda t: t ** 4, std) == pytest.approx(3 * std ** 4, rel=1e-12)
    assert gaussian_expectation(lambda t: np.ones_like(t), std) == pytest.approx(1.0, rel=1e-12)


def test_kinked_integrand_with_breakpoint():
    std = 0.8
    value = gaussian_expectation(np.abs, std, breakpoints=(0.0,))
    assert value == pytest.approx(std * np.sqrt(2 / np.pi), rel=1e-10)


def test_vector_valued_integrand():
    value = gaussian_expectation(lambda t: np.stack([t * t, np.ones_like(t)]), 2.0)
    np.testing.assert_allclose(value, [4.0, 1.0], rtol=1e-12)


def test_zero_std_evaluates_at_origin():
    assert gaussian_expectation(lambda t: np.cos(t) + 2.0, 0.0) == pytest.approx(3.0)


def test_shrink_power_against_monte_carlo(rng):
    std, theta = 1.3, 0.9
    exact = gaussian_expectation(lambda t: shrink(t, theta) ** 2, std, (theta, -theta))
    samples = rng.normal(0.0, std, 2_000_000)
    assert exact == pytest.approx(np.mean(shrink(samples, theta) ** 2), rel=1e-2)


@pytest.mark.slow
def test_shrink_power_against_large_monte_carlo(rng):
    std, theta = 1.0, 0.5
    exact = gaussian_expectation(lambda t: shrink(t, theta) ** 2, std, (theta, -theta))
    total = 0.0
    for _ in range(10):
        samples = rng.normal(0.0, std, 1_000_000)
        total += np.sum(shrink(samples, theta) ** 2)
    assert exact == pytest.approx(total / 1e7, rel=3e-3)


def test_non_convergence_raises():
    with pytest.raises(NumericalError) as info:
        gaussian_expectation(lambda t: np.abs(t - 0.3), 1.0, orders=(5, 7), rtol=1e-14)
    assert "relative_change" in info.value.diagnostics


def test_rule_switches_to_legendre_with_cuts():
    nodes, weights = gaussian_rule(1.0, 61, breakpoints=(0.5,))
    assert weights.sum() == pytest.approx(1.0, rel=1e-8)
    assert nodes.min() >= -12.0 and nodes.max() <= 12.0


def test_composite_legendre_integrates_polynomials():
    nodes, weights = composite_legendre([0.0, 0.3, 2.0], 5)
    assert weights @ nodes ** 3 == pytest.approx(2.0 ** 4 / 4)
