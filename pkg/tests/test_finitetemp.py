import numpy as np
import pytest

from engine.finitetemp import (
    fdt_check,
    solve_thermal_fixed_point,
    thermal_average,
    thermal_moments,
)
from engine.meanfield import solve_fixed_point
from engine.model import DomainError, EnsembleParams, PenaltyModel, ScalarEnv, SignalPrior, scalar_minimize


@pytest.mark.parametrize("beta", [1.0, 50.0, 5000.0])
def test_flat_penalty_is_gaussian(beta):
    env = ScalarEnv(sigma_eff2=0.8, xi=0.35, x0=-0.4, f=0.1)
    moments = thermal_average(beta, env, PenaltyModel.ridge(0.0))

    shift = env.xi + env.sigma_eff2 * env.f
    assert moments.mean_u == pytest.approx(shift, abs=1e-9)
    assert moments.var_u == pytest.approx(env.sigma_eff2 / beta, rel=1e-9)
    expected_log_z = 0.5 * np.log(2 * np.pi * env.sigma_eff2 / beta) + beta * shift ** 2 / (2 * env.sigma_eff2)
    assert moments.log_partition == pytest.approx(expected_log_z, rel=1e-9)


def test_ridge_moments():
    beta, lam = 20.0, 1.5
    env = ScalarEnv(sigma_eff2=0.6, xi=0.3, x0=0.0)
    mean_u, var_u = thermal_moments(beta, env, PenaltyModel.ridge(lam))
    gain = 1.0 / (1.0 + lam * env.sigma_eff2)
    assert mean_u == pytest.approx(env.xi * gain, rel=1e-9)
    assert var_u == pytest.approx(env.sigma_eff2 * gain / beta, rel=1e-9)


def test_l1_approaches_zero_temperature():
    beta = 1e3
    env = ScalarEnv(sigma_eff2=1.0, xi=0.5, x0=1.5)
    penalty = PenaltyModel.l1(1.0)
    mean_u, var_u = thermal_moments(beta, env, penalty)
    assert mean_u == pytest.approx(scalar_minimize(env, penalty).u_hat, abs=1e-3)
    assert beta * var_u == pytest.approx(env.sigma_eff2, rel=1e-2)


def test_smoothed_thermal_gap_closes_like_inverse_beta():
    env = ScalarEnv(sigma_eff2=0.6, xi=0.65, x0=0.0)
    penalty = PenaltyModel.smoothed_l1(1.0, 0.05)
    chi_local = scalar_minimize(env, penalty).chi_local

    gaps = []
    for beta in (1e4, 1e5):
        _, var_u = thermal_moments(beta, env, penalty)
        gaps.append(abs(beta * var_u - chi_local))
    assert np.log10(gaps[1] / gaps[0]) == pytest.approx(-1.0, abs=0.15)


@pytest.mark.parametrize("penalty", [PenaltyModel.l1(2.0), PenaltyModel.smoothed_l1(2.0, 0.05)], ids=["l1", "smoothed"])
def test_variance_is_positive(penalty):
    for x0 in (0.0, 0.3, -2.0):
        _, var_u = thermal_moments(200.0, ScalarEnv(sigma_eff2=0.5, xi=0.05, x0=x0), penalty)
        assert var_u > 0.0


def test_beta_cap():
    env = ScalarEnv(sigma_eff2=1.0, xi=0.0, x0=0.0)
    with pytest.raises(DomainError):
        thermal_moments(2e6, env, PenaltyModel.l1(1.0))
    with pytest.raises(DomainError):
        thermal_moments(0.0, env, PenaltyModel.l1(1.0))


def test_ridge_fdt_is_exact(prior):
    params = EnsembleParams(alpha=0.5, sigma2=1.0)
    rows = fdt_check(params, PenaltyModel.ridge(1.0), prior, [10.0, 100.0])
    assert [r.beta for r in rows] == [10.0, 100.0]
    for row in rows:
        assert row.rel_err <= 1e-8


def test_ridge_thermal_error_matches_zero_temperature(prior):
    params = EnsembleParams(alpha=0.6, sigma2=0.5)
    penalty = PenaltyModel.ridge(2.0)
    reference = solve_fixed_point(params, penalty, prior)
    state = solve_thermal_fixed_point(params, penalty, prior, beta=30.0)
    assert state.q == pytest.approx(reference.state.q, rel=1e-7)
    assert state.sigma_eff2 >= params.sigma2


def test_empty_signal_has_no_error():
    state = solve_thermal_fixed_point(EnsembleParams(0.5, 1.0), PenaltyModel.l1(1.0), SignalPrior(rho=0.0), beta=100.0)
    assert state.q < 1e-12
    assert state.delta_Q > 0.0


def test_fdt_grid_must_increase(prior):
    with pytest.raises(DomainError):
        fdt_check(EnsembleParams(0.5, 1.0), PenaltyModel.ridge(1.0), prior, [100.0, 10.0])
    with pytest.raises(DomainError):
        fdt_check(EnsembleParams(0.5, 1.0), PenaltyModel.ridge(1.0), prior, [])


@pytest.mark.slow
def test_smoothed_l1_fdt_converges(prior):
    params = EnsembleParams(alpha=0.6, sigma2=1.0)
    rows = fdt_check(params, PenaltyModel.smoothed_l1(1.0, 1e-2), prior, [10.0, 100.0, 1000.0, 1e4])
    for a, b in zip(rows, rows[1:]):
        assert b.rel_err <= a.rel_err + 1e-3

    # the gap closes like 1/beta: about 2.4% at beta=1e3
    assert rows[2].rel_err <= 0.03
    slope = np.log10(rows[3].rel_err / rows[2].rel_err)
    assert slope == pytest.approx(-1.0, abs=0.15)
    assert rows[3].rel_err <= 0.02
