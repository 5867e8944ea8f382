import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from engine.model import (
    DomainError,
    PenaltyModel,
    ProblemInstance,
    ScalarEnv,
    SignalPrior,
    draw_instance,
    empirical_mse,
    prox,
    scalar_minimize,
    scalar_objective,
    shrink,
)
from tests.conftest import grid_argmin

PENALTIES = [
    PenaltyModel.l1(1.3),
    PenaltyModel.smoothed_l1(0.8, 0.05),
    PenaltyModel.smoothed_l1(2.0, 1e-3),
    PenaltyModel.ridge(0.7),
]


@pytest.mark.parametrize("penalty", PENALTIES, ids=lambda p: f"{p.kind.value}-{p.lam}")
def test_prox_matches_grid_search(penalty, rng):
    for _ in range(2500):
        t = rng.normal(0.0, 2.0)
        sigma_eff2 = rng.uniform(0.05, 3.0)
        x_hat, _ = prox(t, sigma_eff2, penalty)

        def objective(x):
            return (x - t) ** 2 / (2.0 * sigma_eff2) + penalty.value(x)

        span = abs(t) + penalty.lam * sigma_eff2 + 1.0
        expected = grid_argmin(objective, t - span, t + span)
        assert abs(float(x_hat) - expected) <= 1e-4


def test_l1_tie_goes_to_zero_branch():
    penalty = PenaltyModel.l1(2.0)
    x_hat, chi = prox(np.array([1.0, -1.0, 1.0 + 1e-12]), 0.5, penalty)
    assert x_hat[0] == 0.0 and x_hat[1] == 0.0
    assert chi[0] == 0.0 and chi[1] == 0.0
    assert chi[2] == 0.5


def test_shrink():
    np.testing.assert_allclose(shrink([-3.0, -0.5, 0.0, 0.5, 3.0], 1.0), [-2.0, 0.0, 0.0, 0.0, 2.0])


def test_ridge_prox_is_linear_gain():
    x_hat, chi = prox(np.array([2.0]), 0.5, PenaltyModel.ridge(2.0))
    assert x_hat[0] == pytest.approx(1.0)
    assert chi[0] == pytest.approx(0.25)


@pytest.mark.parametrize("t", [-1.7, -0.02, 0.0, 0.004, 0.9])
def test_smoothed_local_susceptibility_is_derivative(t):
    penalty = PenaltyModel.smoothed_l1(1.0, 0.05)
    sigma_eff2 = 0.6
    h = 1e-6
    up, _ = prox(t + h, sigma_eff2, penalty)
    down, _ = prox(t - h, sigma_eff2, penalty)
    _, chi = prox(t, sigma_eff2, penalty)
    assert float(chi) == pytest.approx(float(up - down) / (2 * h) * sigma_eff2, rel=1e-5, abs=1e-9)


def test_prox_is_global_minimum_on_random_cases(rng):
    steps = np.logspace(-9, 1, 120)
    offsets = np.concatenate([-steps, steps])
    for penalty in PENALTIES:
        for sigma_eff2 in rng.uniform(0.05, 3.0, 20):
            t = rng.normal(0.0, 2.0, 500)
            x_hat, _ = prox(t, sigma_eff2, penalty)

            def objective(x):
                return (x - t[:, None]) ** 2 / (2.0 * sigma_eff2) + penalty.value(x)

            at_hat = objective(x_hat[:, None])[:, 0]
            nearby = objective(x_hat[:, None] + offsets).min(axis=1)
            assert np.all(at_hat <= nearby + 1e-10 * np.maximum(1.0, np.abs(at_hat)))


@pytest.mark.parametrize("xi", [-2.8, -2.7, 2.6, 2.8])
def test_smoothed_scalar_minimize_agrees_with_scipy(xi):
    env = ScalarEnv(sigma_eff2=0.6, xi=xi, x0=0.0)
    penalty = PenaltyModel.smoothed_l1(1.0, 0.01)
    result = scalar_minimize(env, penalty)
    reference = minimize_scalar(
        lambda u: float(scalar_objective(u, env, penalty)),
        bounds=(-10.0, 10.0), method="bounded", options={"xatol": 1e-10},
    )
    assert result.u_hat == pytest.approx(reference.x, abs=1e-6)
    assert float(scalar_objective(result.u_hat, env, penalty)) <= reference.fun + 1e-10


def test_smoothed_prox_is_stationary_everywhere():
    lam, eps, sigma_eff2 = 1.0, 0.01, 0.6
    t = np.linspace(-8.0, 8.0, 1601)
    x_hat, _ = prox(t, sigma_eff2, PenaltyModel.smoothed_l1(lam, eps))
    residual = (x_hat - t) / sigma_eff2 + lam * x_hat / np.sqrt(x_hat ** 2 + eps ** 2)
    assert np.max(np.abs(residual) * sigma_eff2 / np.maximum(1.0, np.abs(t))) <= 1e-10


@pytest.mark.parametrize("t", [-1.7, -0.3, 0.4, 2.5])
def test_l1_local_susceptibility_is_derivative(t):
    penalty = PenaltyModel.l1(1.0)
    sigma_eff2 = 0.6
    h = 1e-6
    up, _ = prox(t + h, sigma_eff2, penalty)
    down, _ = prox(t - h, sigma_eff2, penalty)
    _, chi = prox(t, sigma_eff2, penalty)
    assert float(chi) == pytest.approx(float(up - down) / (2 * h) * sigma_eff2, rel=1e-6, abs=1e-12)


def test_scalar_minimize_with_field():
    env = ScalarEnv(sigma_eff2=0.5, xi=0.4, x0=1.0, f=0.2)
    result = scalar_minimize(env, PenaltyModel.l1(1.0))
    # center = 1.0 + 0.4 + 0.1, threshold 0.5
    assert result.x_hat == pytest.approx(1.0)
    assert result.u_hat == pytest.approx(0.0)
    assert result.chi_local == pytest.approx(0.5)

    u = np.linspace(-3, 3, 60001)
    best = u[np.argmin(scalar_objective(u, env, PenaltyModel.l1(1.0)))]
    assert best == pytest.approx(result.u_hat, abs=1e-4)


def test_scalar_minimize_zero_branch():
    env = ScalarEnv(sigma_eff2=1.0, xi=-0.3, x0=0.0)
    result = scalar_minimize(env, PenaltyModel.l1(1.0))
    assert result.x_hat == 0.0 and result.chi_local == 0.0


def test_domain_errors():
    with pytest.raises(DomainError):
        PenaltyModel.smoothed_l1(1.0, 0.0)
    with pytest.raises(DomainError):
        PenaltyModel.l1(-1.0)
    with pytest.raises(DomainError):
        ScalarEnv(sigma_eff2=0.0, xi=0.0, x0=0.0)
    with pytest.raises(DomainError):
        prox(1.0, -1.0, PenaltyModel.l1(1.0))
    with pytest.raises(DomainError):
        SignalPrior(rho=1.5)


def test_smoothness_flags():
    assert not PenaltyModel.l1(1.0).is_smooth
    assert PenaltyModel.smoothed_l1(1.0, 0.1).is_smooth and PenaltyModel.ridge(1.0).is_smooth
    assert PenaltyModel.smoothed_l1(1.0, 0.1).has_kink and not PenaltyModel.ridge(1.0).has_kink


def test_curvature():
    assert PenaltyModel.l1(1.0).curvature(0.0) == np.inf
    assert PenaltyModel.l1(1.0).curvature(0.3) == 0.0
    assert PenaltyModel.ridge(2.5).curvature(7.0) == 2.5
    eps = 0.1
    assert PenaltyModel.smoothed_l1(2.0, eps).curvature(0.0) == pytest.approx(2.0 / eps)


def test_draw_instance_is_seeded(prior):
    a = draw_instance(50, 20, prior, 0.0, seed=7)
    b = draw_instance(50, 20, prior, 0.0, seed=7)
    c = draw_instance(50, 20, prior, 0.0, seed=8)
    assert np.array_equal(a.H, b.H) and np.array_equal(a.x0, b.x0)
    assert not np.array_equal(a.H, c.H)
    assert a.H.shape == (20, 50)
    np.testing.assert_allclose(a.y, a.H @ a.x0)
    assert a.alpha == pytest.approx(0.4)


def test_draw_instance_column_scale(prior):
    instance = draw_instance(400, 300, prior, 0.0, seed=1)
    assert np.mean(instance.H ** 2) == pytest.approx(1.0 / 300, rel=0.02)


def test_nonzero_count_is_binomial(prior):
    N = 100
    counts = np.array([
        np.count_nonzero(draw_instance(N, 10, prior, 0.0, seed=s).x0) for s in range(400)
    ])
    mean = N * prior.rho
    var = N * prior.rho * (1.0 - prior.rho)
    assert counts.mean() == pytest.approx(mean, abs=4.0 * np.sqrt(var / counts.size))
    assert counts.var(ddof=1) == pytest.approx(var, rel=0.25)


def test_column_norm_spread_shrinks_like_inverse_m(prior):
    ms = np.array([50, 100, 200, 400])
    spreads = []
    for m in ms:
        H = draw_instance(400, int(m), prior, 0.0, seed=int(m)).H
        norms = np.sum(H ** 2, axis=0)
        assert norms.mean() == pytest.approx(1.0, abs=0.05)
        spreads.append(norms.var(ddof=1))
    slope = np.polyfit(np.log(ms), np.log(spreads), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.2)


def test_instance_json_round_trip_is_exact(prior):
    instance = draw_instance(12, 7, prior, 0.01, seed=3)
    restored = ProblemInstance.from_json(instance.to_json())
    assert np.array_equal(restored.H, instance.H)
    assert np.array_equal(restored.y, instance.y)
    assert np.array_equal(restored.x0, instance.x0)
    assert restored.prior == instance.prior


def test_instance_size_cap(prior):
    with pytest.raises(DomainError):
        draw_instance(10 ** 6, 10, prior, 0.0, seed=0)


def test_empirical_mse():
    assert empirical_mse(np.array([1.0, 2.0]), np.array([1.0, 0.0])) == pytest.approx(2.0)
