"""Quasi-likelihood stage: coordinate projection, rate estimation, inversion."""

import math

import numpy as np
import pytest

from spde_drift import (
    ApproxCoordinateSeries,
    BoundaryWarning,
    ThetaParams,
    ThinnedTimeGrid,
    approx_coordinate,
    approx_coordinate_series,
    eigenfunction,
    lambda_k,
    maximize_loglik,
    profile_loglik,
    quasi_loglik,
    theta0_hat,
    xi_factor,
)

EXAMPLE1 = ThetaParams(0.0, 1.0, 0.2)

# (1 - exp(-2*3.22*0.002)) / (2*3.22*0.002), frozen from mpmath
XI_FROZEN = 0.993587560265521851


def _series(values, eta=0.0, k=1):
    return ApproxCoordinateSeries(k=k, values=np.asarray(values, dtype=float), eta_hat=eta)


def _ou_path(lam, eps, x0, n_steps, dt, rng):
    a = math.exp(-lam * dt)
    scale = eps * math.sqrt((1.0 - a * a) / (2.0 * lam))
    x = np.empty(n_steps + 1)
    x[0] = x0
    for i in range(1, n_steps + 1):
        x[i] = a * x[i - 1] + scale * rng.standard_normal()
    return x


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------


def test_thinned_time_grid_reference_settings():
    grid = ThinnedTimeGrid(N2=500, N=10_000, T=1.0)
    assert grid.stride == 20
    assert grid.delta_bar == pytest.approx(0.002, rel=1e-15)
    assert grid.times()[-1] == pytest.approx(1.0, rel=1e-12)
    assert grid.row_steps()[-1] == 10_000


def test_thinned_time_grid_validation():
    with pytest.raises(ValueError):
        ThinnedTimeGrid(N2=11, N=10, T=1.0)
    with pytest.raises(ValueError):
        ThinnedTimeGrid(N2=0, N=10, T=1.0)


# ---------------------------------------------------------------------------
# approximate coordinate
# ---------------------------------------------------------------------------


def test_zero_row_projects_to_zero():
    assert approx_coordinate(np.zeros(64), eta_hat=2.0, k=1, M=64) == 0.0


def test_single_mode_row_is_recovered_exactly():
    # with the true curvature the exponential weights cancel and the
    # trigonometric identity (1/M) sum 2 sin^2(pi j / M) = 1 makes the
    # projection exact
    M = 128
    eta = EXAMPLE1.eta
    y = np.arange(1, M + 1) / M
    c = -1.7
    row = c * eigenfunction(eta, 1, y)
    assert approx_coordinate(row, eta_hat=eta, k=1, M=M) == pytest.approx(c, rel=1e-12)


def test_second_mode_row_is_orthogonal():
    M = 128
    eta = EXAMPLE1.eta
    y = np.arange(1, M + 1) / M
    row = eigenfunction(eta, 2, y)
    assert abs(approx_coordinate(row, eta_hat=eta, k=1, M=M)) < 1e-10


def test_series_projection_matches_scalar():
    rng = np.random.default_rng(5)
    rows = rng.standard_normal((7, 32))
    series = approx_coordinate_series(rows, eta_hat=1.5, M=32)
    for i in range(7):
        assert series.values[i] == pytest.approx(
            approx_coordinate(rows[i], 1.5, 1, 32), rel=1e-14
        )


def test_projection_error_shrinks_with_resolution():
    # field built from K >> M modes with known coordinates (projection is
    # exact when K < M, so the error comes from modes aliasing across the
    # grid); the error decays at least linearly in 1/M
    K = 1000
    coords = 1.0 / np.arange(1, K + 1) ** 2
    eta = EXAMPLE1.eta
    errors = []
    for M in (64, 128, 256):
        y = np.arange(1, M + 1) / M
        row = eigenfunction(eta, np.arange(1, K + 1)[:, None], y[None, :]).T @ coords
        errors.append(abs(approx_coordinate(row, eta, 1, M) - coords[0]))
    assert errors[1] < errors[0] / 2.0
    assert errors[2] < errors[1] / 2.0


# ---------------------------------------------------------------------------
# variance deflation factor
# ---------------------------------------------------------------------------


def test_xi_factor_unit_at_zero():
    assert xi_factor(0.0, 0.002) == pytest.approx(1.0, rel=1e-15)
    assert xi_factor(1e-9, 0.002) == pytest.approx(1.0, rel=1e-9)


def test_xi_factor_frozen_point():
    assert xi_factor(3.22, 0.002) == pytest.approx(XI_FROZEN, rel=1e-14)


def test_xi_factor_bounds_and_monotonicity():
    lams = np.linspace(1e-3, 50.0, 200)
    values = xi_factor(lams, 0.01)
    assert np.all(values > 0.0) and np.all(values < 1.0)
    assert np.all(np.diff(values) < 0.0)


# ---------------------------------------------------------------------------
# quasi log-likelihood
# ---------------------------------------------------------------------------


def test_loglik_single_zero_transition():
    grid = ThinnedTimeGrid(N2=1, N=1, T=0.002)
    eps, lam = 0.1, 3.0
    value = quasi_loglik(lam, _series([0.0, 0.0]), eps, grid)
    expect = -0.5 * math.log(eps**2 * grid.delta_bar * xi_factor(lam, grid.delta_bar))
    assert value == pytest.approx(expect, rel=1e-14)


def test_loglik_pure_decay_transition_has_no_residual():
    grid = ThinnedTimeGrid(N2=1, N=1, T=0.01)
    lam, eps, x0 = 2.5, 0.3, 1.7
    series = _series([x0, x0 * math.exp(-lam * grid.delta_bar)])
    expect = -0.5 * math.log(eps**2 * grid.delta_bar * xi_factor(lam, grid.delta_bar))
    assert quasi_loglik(lam, series, eps, grid) == pytest.approx(expect, rel=1e-14)


def test_profile_matches_pointwise_loglik():
    rng = np.random.default_rng(3)
    grid = ThinnedTimeGrid(N2=50, N=50, T=0.25)
    series = _series(rng.standard_normal(51))
    lams, values = profile_loglik(series, 0.2, grid, interval=(0.05, 30.0), scan_points=16)
    for lam, value in zip(lams, values):
        assert value == pytest.approx(quasi_loglik(lam, series, 0.2, grid), rel=1e-12)


def test_score_is_centered_at_true_rate():
    # exact OU data: the quasi-likelihood is the true transition likelihood,
    # so the score at the true rate averages to zero
    lam_star, eps, dt, n = 3.22, 0.1, 0.005, 200
    grid = ThinnedTimeGrid(N2=n, N=n, T=n * dt)
    rng = np.random.default_rng(2718)
    h = 1e-5
    scores = np.empty(1000)
    for rep in range(scores.size):
        x = _ou_path(lam_star, eps, 3.0, n, dt, rng)
        series = _series(x)
        scores[rep] = (
            quasi_loglik(lam_star + h, series, eps, grid)
            - quasi_loglik(lam_star - h, series, eps, grid)
        ) / (2.0 * h)
    se = scores.std(ddof=1) / math.sqrt(scores.size)
    assert abs(scores.mean()) < 4.0 * se


# ---------------------------------------------------------------------------
# rate maximization
# ---------------------------------------------------------------------------


def test_noiseless_decay_recovery():
    # dispersion enters the objective only through the variance scale; for a
    # pure decay series the optimum approaches the true rate as eps -> 0
    # (the log-variance term displaces it by O(eps^2))
    grid = ThinnedTimeGrid(N2=500, N=500, T=1.0)
    for lam_star, x0 in ((3.2239208802178716, 3.0), (0.12392088021787151, 2.0)):
        series = _series(x0 * np.exp(-lam_star * grid.times()))
        lam_hat = maximize_loglik(series, 1e-4, grid)
        assert lam_hat == pytest.approx(lam_star, abs=1e-6)


def test_noiseless_offset_scales_with_squared_dispersion():
    grid = ThinnedTimeGrid(N2=500, N=500, T=1.0)
    lam_star = 3.2239208802178716
    series = _series(3.0 * np.exp(-lam_star * grid.times()))
    offset_big = maximize_loglik(series, 0.1, grid) - lam_star
    offset_small = maximize_loglik(series, 0.05, grid) - lam_star
    assert offset_big > 0.0 and offset_small > 0.0
    assert 3.0 < offset_big / offset_small < 5.0


def test_maximizer_scale_invariance():
    rng = np.random.default_rng(10)
    grid = ThinnedTimeGrid(N2=100, N=100, T=0.5)
    x = _ou_path(2.0, 0.1, 1.0, 100, 0.005, rng)
    a = maximize_loglik(_series(x), 0.1, grid)
    b = maximize_loglik(_series(5.0 * x), 0.5, grid)
    assert a == pytest.approx(b, rel=1e-7)


def test_degenerate_series_hits_boundary():
    grid = ThinnedTimeGrid(N2=20, N=20, T=0.1)
    with pytest.warns(BoundaryWarning):
        maximize_loglik(_series(np.zeros(21)), 0.1, grid)


def test_rate_recovery_on_noisy_data():
    lam_star, eps, dt, n = 3.22, 0.05, 0.002, 500
    grid = ThinnedTimeGrid(N2=n, N=n, T=n * dt)
    rng = np.random.default_rng(99)
    estimates = [
        maximize_loglik(_series(_ou_path(lam_star, eps, 3.0, n, dt, rng)), eps, grid)
        for _ in range(40)
    ]
    assert np.mean(estimates) == pytest.approx(lam_star, abs=0.1)


# ---------------------------------------------------------------------------
# reaction coefficient inversion
# ---------------------------------------------------------------------------


def test_theta0_examples():
    assert theta0_hat(3.2239208802178716, 1.0, 0.2) == pytest.approx(0.0, abs=1e-12)
    assert theta0_hat(0.12392088021787151, 1.0, 0.2) == pytest.approx(3.1, rel=1e-12)
    theta2 = 0.7
    assert theta0_hat(math.pi**2 * theta2, 0.0, theta2) == pytest.approx(0.0, abs=1e-12)


def test_theta0_inverts_eigenvalue_exactly():
    rng = np.random.default_rng(23)
    for _ in range(25):
        lam_hat = rng.uniform(0.01, 50.0)
        theta1 = rng.normal()
        theta2 = rng.uniform(0.05, 3.0)
        theta0 = theta0_hat(lam_hat, theta1, theta2)
        recovered = lambda_k(ThetaParams(theta0, theta1, theta2), 1)
        assert recovered == pytest.approx(lam_hat, rel=1e-12, abs=1e-12)


def test_theta0_requires_positive_theta2():
    with pytest.raises(ValueError):
        theta0_hat(1.0, 1.0, 0.0)
