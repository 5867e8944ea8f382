import numpy as np
import pytest
from scipy.special import ndtr

from engine.meanfield import (
    MeanFieldState,
    active_fraction,
    boundary_for_rho,
    check_monotone,
    BoundaryPoint,
    critical_alpha_stability,
    quenched_moments,
    scan_alpha,
    scan_phase_boundary,
    solve_basis_pursuit_limit,
    solve_fixed_point,
    solve_threshold,
)
from engine.model import DomainError, EnsembleParams, PenaltyModel, SignalPrior, draw_instance, empirical_mse, prox
from engine.suscept import minimize_smooth_cost
from utils.seeding import derive_seed


@pytest.mark.parametrize("penalty", [PenaltyModel.l1(1.5), PenaltyModel.ridge(0.8)], ids=["l1", "ridge"])
def test_closed_form_matches_quadrature(penalty, prior):
    state = MeanFieldState(q=0.09, chi_bar=0.3, sigma_eff2=0.7, sigma_xi2=0.3)
    closed = quenched_moments(state, penalty, prior, method="closed_form")
    numeric = quenched_moments(state, penalty, prior, method="quadrature")
    np.testing.assert_allclose(closed, numeric, rtol=1e-7)


def test_empty_input_gives_zero_moments():
    state = MeanFieldState(q=0.0, chi_bar=0.5, sigma_eff2=1.0, sigma_xi2=0.0)
    assert quenched_moments(state, PenaltyModel.l1(1.0), SignalPrior(rho=0.0)) == (0.0, 0.0)


@pytest.mark.parametrize("sigma_xi2", [0.0, 0.3, 2.0])
def test_ridge_susceptibility_is_exact(sigma_xi2, prior):
    lam = 0.8
    state = MeanFieldState(q=0.1, chi_bar=0.3, sigma_eff2=0.7, sigma_xi2=sigma_xi2)
    _, chi = quenched_moments(state, PenaltyModel.ridge(lam), prior)
    assert chi == pytest.approx(0.7 / (1.0 + lam * 0.7), rel=1e-14)


def test_l1_susceptibility_is_twice_gaussian_tail():
    state = MeanFieldState(q=1.0, chi_bar=0.3, sigma_eff2=1.0, sigma_xi2=1.0)
    empty = SignalPrior(rho=0.0)
    expected = 2.0 * ndtr(-1.0)
    for method in ("closed_form", "quadrature"):
        _, chi = quenched_moments(state, PenaltyModel.l1(1.0), empty, method=method)
        assert chi == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.3173, abs=1e-4)


@pytest.mark.parametrize("penalty", [PenaltyModel.l1(1.0), PenaltyModel.smoothed_l1(1.0, 0.05), PenaltyModel.ridge(0.8)],
                         ids=["l1", "smoothed_l1", "ridge"])
def test_quenched_moments_match_monte_carlo(penalty, prior):
    state = MeanFieldState(q=0.09, chi_bar=0.3, sigma_eff2=0.7, sigma_xi2=0.3)
    rng = np.random.default_rng(5)
    n = 500_000
    x0 = prior.sample(n, rng)
    t = x0 + rng.normal(0.0, np.sqrt(state.sigma_xi2), n)
    x_hat, chi = prox(t, state.sigma_eff2, penalty)

    q, chi_bar = quenched_moments(state, penalty, prior)
    assert q == pytest.approx(np.mean((x_hat - x0) ** 2), rel=2e-2)
    assert chi_bar == pytest.approx(np.mean(chi), rel=1e-2)


@pytest.mark.slow
def test_l1_susceptibility_matches_ten_million_samples():
    t = np.random.default_rng(9).standard_normal(10_000_000)
    _, chi = prox(t, 1.0, PenaltyModel.l1(1.0))
    state = MeanFieldState(q=1.0, chi_bar=0.3, sigma_eff2=1.0, sigma_xi2=1.0)
    _, expected = quenched_moments(state, PenaltyModel.l1(1.0), SignalPrior(rho=0.0))
    assert np.mean(chi) == pytest.approx(expected, abs=1e-3)


def test_active_fraction_limits(prior):
    assert active_fraction(0.0, 0.5, prior) == pytest.approx(1.0)
    assert active_fraction(1e3, 0.5, prior) == pytest.approx(0.0)


def test_threshold_solves_active_fraction(prior):
    theta = solve_threshold(0.4, 0.2, prior)
    assert active_fraction(theta, 0.2, prior) == pytest.approx(0.4, rel=1e-10)


def test_l1_fixed_point_is_self_consistent(prior):
    params = EnsembleParams(alpha=0.5, sigma2=0.3, sigma_zeta2=0.01)
    penalty = PenaltyModel.l1(1.0)
    report = solve_fixed_point(params, penalty, prior)
    assert report.converged

    q, chi = quenched_moments(report.state, penalty, prior)
    assert q == pytest.approx(report.state.q, rel=1e-8)
    assert chi == pytest.approx(report.state.chi_bar, rel=1e-8)


def test_ridge_fixed_point_matches_quadratic(prior):
    alpha, sigma2, lam = 0.6, 0.5, 2.0
    report = solve_fixed_point(EnsembleParams(alpha, sigma2), PenaltyModel.ridge(lam), prior)
    chi = report.state.chi_bar
    sigma_eff2 = sigma2 + chi / alpha
    assert chi == pytest.approx(sigma_eff2 / (1.0 + lam * sigma_eff2), rel=1e-9)


def test_smoothed_penalty_approaches_l1(prior):
    params = EnsembleParams(alpha=0.5, sigma2=0.3)
    l1 = solve_fixed_point(params, PenaltyModel.l1(1.0), prior)
    smooth = solve_fixed_point(params, PenaltyModel.smoothed_l1(1.0, 1e-4), prior)
    assert smooth.converged
    assert smooth.state.q == pytest.approx(l1.state.q, rel=1e-2)
    assert smooth.state.chi_bar == pytest.approx(l1.state.chi_bar, rel=1e-2)


def test_empty_signal_gives_zero_error():
    report = solve_fixed_point(EnsembleParams(0.5, 0.3), PenaltyModel.l1(1.0), SignalPrior(rho=0.0))
    assert report.converged and not report.diverged
    assert report.state.q == pytest.approx(0.0, abs=1e-12)


def test_basis_pursuit_recovery_phase(prior):
    report = solve_basis_pursuit_limit(0.75, prior)
    assert report.converged
    assert report.state.q == 0.0 and report.state.chi_bar == 0.0


def test_basis_pursuit_error_phase(prior):
    report = solve_basis_pursuit_limit(0.35, prior)
    assert report.converged
    assert report.state.q > 1e-3
    assert report.state.chi_bar > 0.0
    assert report.active_fraction == pytest.approx(0.35, rel=1e-8)


def test_square_system(prior):
    assert solve_basis_pursuit_limit(1.0, prior).state.q == 0.0
    noisy = solve_basis_pursuit_limit(1.0, prior, sigma_zeta2=0.01)
    assert noisy.diverged and not noisy.converged


def test_noisy_basis_pursuit_has_positive_error(prior):
    report = solve_basis_pursuit_limit(0.75, prior, sigma_zeta2=1e-3)
    assert report.converged
    assert report.state.q > 0.0


def test_stability_threshold_near_known_transition():
    assert critical_alpha_stability(0.2) == pytest.approx(0.51, abs=0.02)
    assert critical_alpha_stability(0.1) < critical_alpha_stability(0.3)


def test_scan_alpha_flags_phases(prior):
    points = scan_alpha([0.3, 0.4, 0.7, 0.8], prior)
    assert [p.recovered for p in points] == [False, False, True, True]
    assert [p.chi_positive for p in points] == [True, True, False, False]


def test_scan_alpha_finite_sigma_warm_starts(prior):
    points = scan_alpha([0.4, 0.5, 0.6], prior, penalty=PenaltyModel.l1(1.0), sigma2=0.2)
    assert all(p.converged for p in points)
    assert points[0].q > points[-1].q


def test_error_is_nonincreasing_along_alpha(prior):
    grid = [round(a, 2) for a in np.arange(0.3, 0.96, 0.05)]
    bp = [p.q for p in scan_alpha(grid, prior)]
    assert all(b <= a + 1e-12 for a, b in zip(bp, bp[1:]))

    noisy = [p.q for p in scan_alpha(grid[:8], prior, penalty=PenaltyModel.l1(1.0), sigma2=0.2)]
    assert all(b <= a * (1.0 + 1e-8) for a, b in zip(noisy, noisy[1:]))


def test_smoothed_penalty_converges_as_epsilon_shrinks(prior):
    state = MeanFieldState(q=0.09, chi_bar=0.3, sigma_eff2=0.7, sigma_xi2=0.3)
    exact = np.array(quenched_moments(state, PenaltyModel.l1(1.0), prior))
    gaps = [
        np.max(np.abs(np.array(quenched_moments(state, PenaltyModel.smoothed_l1(1.0, eps), prior)) - exact) / exact)
        for eps in (1e-2, 1e-3, 1e-4)
    ]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-2


def test_check_monotone_flags_violation():
    ok = [BoundaryPoint(0.1, 0.3, 1e-3), BoundaryPoint(0.2, 0.5, 1e-3)]
    bad = [BoundaryPoint(0.1, 0.5, 1e-3), BoundaryPoint(0.2, 0.3, 1e-3)]
    assert check_monotone(ok)
    assert not check_monotone(bad)


def test_domain_errors(prior):
    with pytest.raises(DomainError):
        solve_fixed_point(EnsembleParams(0.5, 0.3), PenaltyModel.l1(1.0), prior, damping=0.0)
    with pytest.raises(DomainError):
        solve_fixed_point(EnsembleParams(0.5, 0.0), PenaltyModel.l1(1.0), prior)
    with pytest.raises(DomainError):
        solve_basis_pursuit_limit(1.2, prior)
    with pytest.raises(DomainError):
        MeanFieldState(q=-1.0, chi_bar=0.0, sigma_eff2=1.0, sigma_xi2=0.0)


@pytest.mark.slow
def test_phase_boundary_location():
    point = boundary_for_rho(0.2, tol_alpha=2e-3)
    assert point.ok
    assert point.alpha_c == pytest.approx(0.51, abs=0.02)
    assert point.alpha_c == pytest.approx(point.alpha_c_stability, abs=0.01)


@pytest.mark.slow
def test_phase_boundary_is_monotone():
    points = scan_phase_boundary([0.1, 0.2, 0.3], tol_alpha=5e-3)
    assert all(p.ok for p in points)
    assert check_monotone(points)


@pytest.mark.slow
def test_ridge_fixed_point_matches_finite_size_error():
    alpha, sigma2, sigma_zeta2, lam, N = 0.5, 0.5, 0.01, 1.0, 800
    prior = SignalPrior(rho=1.0)
    penalty = PenaltyModel.ridge(lam)
    q = solve_fixed_point(EnsembleParams(alpha, sigma2, sigma_zeta2), penalty, prior).state.q

    errors = []
    for i in range(40):
        instance = draw_instance(N, int(alpha * N), prior, sigma_zeta2, derive_seed(3, i))
        x_hat = minimize_smooth_cost(instance.H, instance.y, penalty, sigma2).x_hat
        errors.append(empirical_mse(x_hat, instance.x0))
    assert np.mean(errors) == pytest.approx(q, rel=0.1)
