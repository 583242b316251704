"""Contrast stage: thinned sites, realized variations, profile inversion."""

import math

import numpy as np
import pytest

from spde_drift import (
    BoundaryWarning,
    ContrastOptimizationError,
    DegenerateDataWarning,
    InitialCondition,
    NoiseLevel,
    RealizedVariations,
    RngStream,
    SimGrid,
    ThetaParams,
    ThinnedSpatialGrid,
    contrast,
    minimize_contrast,
    observe_field,
    realized_variation,
    realized_variations,
)
from spde_drift.contrast import profile_curve

EXAMPLE1 = ThetaParams(0.0, 1.0, 0.2)


def _rv(z, sites_grid, eps=0.1):
    return RealizedVariations(z=np.asarray(z, dtype=float), epsilon=NoiseLevel(eps), grid=sites_grid)


# ---------------------------------------------------------------------------
# thinned spatial grid
# ---------------------------------------------------------------------------


def test_full_scale_grid_layout():
    grid = ThinnedSpatialGrid(delta=0.05, m=99, M=10_000)
    assert grid.M_bar == 9001
    assert grid.stride == 90
    sites = grid.sites
    assert sites.size == 99
    assert sites[0] == pytest.approx(0.05, rel=1e-12)
    assert np.all(sites >= 0.05) and np.all(sites <= 0.95)
    np.testing.assert_allclose(np.diff(sites), 0.009, rtol=1e-12)


def test_desk_scale_grid_layout():
    grid = ThinnedSpatialGrid(delta=0.05, m=63, M=2000)
    assert grid.M_bar == 1801
    assert grid.stride == 28
    assert np.all(grid.sites <= 0.95)


def test_grid_validation():
    with pytest.raises(ValueError):
        ThinnedSpatialGrid(delta=0.0, m=5, M=100)
    with pytest.raises(ValueError):
        ThinnedSpatialGrid(delta=0.5, m=5, M=100)
    with pytest.raises(ValueError):
        ThinnedSpatialGrid(delta=0.05, m=1000, M=100)  # m > M_bar


# ---------------------------------------------------------------------------
# realized variation
# ---------------------------------------------------------------------------


def test_constant_column_has_zero_variation():
    assert realized_variation(np.full(11, 3.7), N=10, T=1.0) == 0.0


def test_alternating_column_value():
    column = np.array([0.0, 2.0, 0.0, 2.0, 0.0])
    # increments of +-a with N=4, T=1: (1/(4*sqrt(1/4))) * 4a^2 = 2a^2
    assert realized_variation(column, N=4, T=1.0) == pytest.approx(2.0 * 2.0**2, rel=1e-14)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    cols = rng.standard_normal((21, 4))
    batch = realized_variations(cols, T=2.0)
    for j in range(4):
        assert batch[j] == pytest.approx(realized_variation(cols[:, j], 20, 2.0), rel=1e-14)


def _exact_mean_variation(theta, eps, N, T, K, x0, sites):
    """Closed-form E[Z_j] for the truncated model: independent oracle.

    Mode increments are independent with means from the noiseless decay and
    variances from the exact transitions; the deterministic part enters as
    squared increments of the noiseless field path (cross-mode terms do not
    cancel there).
    """
    from spde_drift import eigenfunction, lambda_k

    dt = T / N
    k = np.arange(1, K + 1)
    lam = lambda_k(theta, k)
    a = np.exp(-lam * dt)
    w = (1.0 - a**2) / (2.0 * lam)
    basis = eigenfunction(theta.eta, k[:, None], np.asarray(sites)[None, :])
    r = a**2
    geo = np.where(np.abs(1.0 - r) > 1e-14, (1.0 - r**N) / (1.0 - r), float(N))
    sum_var = eps**2 * (N - geo) / (2.0 * lam)  # sum_i Var(x_k(t_{i-1}))
    noise_part = ((1.0 - a) ** 2 * sum_var + N * eps**2 * w) @ (basis**2)
    tgrid = np.arange(0, N + 1) * dt
    det_path = (x0[:, None] * np.exp(-lam[:, None] * tgrid[None, :])).T @ basis
    det_part = np.sum(np.diff(det_path, axis=0) ** 2, axis=0)
    return (noise_part + det_part) / (N * math.sqrt(dt))


def test_simulated_variations_track_profile_curve():
    # Monte-Carlo check of the mean of Z_j / eps^2 over replicates: tight
    # against the closed-form truncated-model expectation (per-replicate
    # relative sd is about sqrt(Gamma*pi/N), ~0.8% standard error here) and
    # loose against the asymptotic profile curve, which the finite-N mean
    # overshoots by a few percent at the far sites where it is tiny.
    from spde_drift.model import initial_coefficients

    theta = EXAMPLE1
    eps = 0.1
    grid = SimGrid(N=2000, M=500, T=1.0, K=5000)
    sgrid = ThinnedSpatialGrid(delta=0.05, m=5, M=500)
    xi = InitialCondition.parabola(4.2)
    reps = 20
    samples = np.empty((reps, sgrid.m))
    for rep in range(reps):
        obs = observe_field(
            theta, eps, grid, xi, RngStream(seed=314, replicate=rep), sgrid.sites, np.array([0])
        )
        samples[rep] = realized_variations(obs.site_columns, grid.T)
    mean_rescaled = samples.mean(axis=0) / eps**2
    se = samples.std(axis=0, ddof=1) / math.sqrt(reps) / eps**2

    x0 = initial_coefficients(xi, theta.eta, grid.K)
    exact = _exact_mean_variation(theta, eps, grid.N, grid.T, grid.K, x0, sgrid.sites) / eps**2
    assert np.all(np.abs(mean_rescaled - exact) < 4.0 * se)

    target = profile_curve(theta.sigma0_sq, theta.eta, sgrid.sites)
    np.testing.assert_allclose(mean_rescaled, target, rtol=0.08)


# ---------------------------------------------------------------------------
# contrast function
# ---------------------------------------------------------------------------


def _small_grid():
    return ThinnedSpatialGrid(delta=0.05, m=9, M=100)


def test_contrast_zero_at_perfect_fit():
    g = _small_grid()
    eps = 0.1
    z = eps**2 * profile_curve(2.0, 1.5, g.sites)
    rv = _rv(z, g, eps)
    assert contrast(2.0, 1.5, rv) == pytest.approx(0.0, abs=1e-28)


def test_contrast_zero_data_plugin_value():
    g = _small_grid()
    rv = _rv(np.zeros(g.m), g)
    s, e = 1.3, -0.7
    expect = float(np.mean(profile_curve(s, e, g.sites) ** 2))
    assert contrast(s, e, rv) == pytest.approx(expect, rel=1e-14)


def test_contrast_single_perturbation_quadratic():
    g = _small_grid()
    eps = 0.1
    z = eps**2 * profile_curve(2.0, 1.5, g.sites)
    z[3] += 1e-3
    rv = _rv(z, g, eps)
    assert contrast(2.0, 1.5, rv) == pytest.approx((1e-3 / eps**2) ** 2 / g.m, rel=1e-12)


def test_contrast_rejects_nonpositive_scale():
    rv = _rv(np.zeros(9), _small_grid())
    with pytest.raises(ValueError):
        contrast(0.0, 1.0, rv)


def test_scale_equivariance_of_argmin():
    # contrast depends on the data only through z/eps^2
    g = _small_grid()
    rng = np.random.default_rng(8)
    z = 0.01 * profile_curve(2.0, 3.0, g.sites) * rng.uniform(0.9, 1.1, g.m)
    a = minimize_contrast(_rv(z, g, 0.1))
    b = minimize_contrast(_rv(4.0 * z, g, 0.2))
    assert a.sigma0_sq_hat == pytest.approx(b.sigma0_sq_hat, rel=1e-9)
    assert a.eta_hat == pytest.approx(b.eta_hat, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# minimization
# ---------------------------------------------------------------------------


def test_noise_free_inversion():
    g = ThinnedSpatialGrid(delta=0.05, m=25, M=1000)
    eps = 0.1
    sigma0_sq, eta = EXAMPLE1.sigma0_sq, EXAMPLE1.eta
    z = eps**2 * profile_curve(sigma0_sq, eta, g.sites)
    est = minimize_contrast(_rv(z, g, eps))
    assert est.sigma0_sq_hat == pytest.approx(sigma0_sq, abs=1e-6)
    assert est.eta_hat == pytest.approx(eta, abs=1e-6)
    assert est.theta2_hat == pytest.approx(0.2, abs=1e-5)
    assert est.theta1_hat == pytest.approx(1.0, abs=1e-5)
    assert est.contrast_value < 1e-16


def test_single_site_flagged_degenerate():
    g = ThinnedSpatialGrid(delta=0.05, m=1, M=100)
    with pytest.warns(DegenerateDataWarning):
        minimize_contrast(_rv([0.01], g))


def test_trace_is_monotone_nonincreasing():
    g = _small_grid()
    rng = np.random.default_rng(21)
    z = 0.01 * profile_curve(1.4, 2.0, g.sites) * rng.uniform(0.8, 1.2, g.m)
    est = minimize_contrast(_rv(z, g))
    assert np.all(np.diff(est.trace.best_values) <= 0.0)
    assert est.trace.n_grid_evaluations == 64 * 64
    assert est.trace.n_refine_evaluations > 0


def test_boundary_warning_near_box_edge():
    g = _small_grid()
    eps = 0.1
    z = eps**2 * profile_curve(2.0, 19.95, g.sites)  # optimum at the eta edge
    with pytest.warns(BoundaryWarning):
        minimize_contrast(_rv(z, g, eps))


def test_non_finite_data_raises_optimizer_error():
    g = _small_grid()
    z = np.full(g.m, np.nan)
    with pytest.raises((ContrastOptimizationError, ValueError)):
        rv = RealizedVariations(z=z, epsilon=NoiseLevel(0.1), grid=g)
        minimize_contrast(rv)


def test_reparam_mapping_consistency():
    g = _small_grid()
    eps = 0.1
    z = eps**2 * profile_curve(1.7, -2.0, g.sites)
    est = minimize_contrast(_rv(z, g, eps))
    assert est.theta2_hat == pytest.approx(est.sigma0_sq_hat**-2, rel=1e-14)
    assert est.theta1_hat == pytest.approx(est.eta_hat * est.theta2_hat, rel=1e-14)
