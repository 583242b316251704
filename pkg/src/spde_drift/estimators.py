"""Scikit-learn style estimators wrapping the two-stage procedure.

``SPDEDriftEstimator.fit(X)`` consumes the raw observation matrix
``X[i, j] = field at time t_i and site y_j = (j+1)/M`` (shape (N+1, M)),
thins it internally and exposes the fitted coefficients as trailing-underscore
attributes, so the procedure composes with pipelines, ``clone`` and
``get_params`` like any other estimator.  The per-stage estimators are also
available on their own, and the functional core is reachable through
:func:`two_stage_estimate` for pre-sliced observations (full-scale grids
where the full matrix never exists in memory).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .contrast import (
    DEFAULT_SEARCH_BOX,
    ContrastEstimate,
    RealizedVariations,
    ThinnedSpatialGrid,
    minimize_contrast,
    realized_variations,
)
from .exceptions import RateConditionWarning
from .likelihood import (
    DEFAULT_RATE_INTERVAL,
    ApproxCoordinateSeries,
    ThinnedTimeGrid,
    approx_coordinate_series,
    maximize_loglik,
    quasi_loglik,
    theta0_hat,
)
from .model import NoiseLevel
from .simulate import FieldObservations, SimGrid


@dataclass(frozen=True)
class EstimationResult:
    """Output of one full two-stage estimation."""

    theta1_hat: float
    theta2_hat: float
    lambda1_hat: float
    theta0_hat: float
    sigma0_sq_hat: float
    eta_hat: float
    contrast_value: float
    loglik_value: float
    contrast: ContrastEstimate = field(repr=False)


class FreeSites:
    """Minimal site-design interface: explicit interior sites, no lattice."""

    def __init__(self, sites):
        self.sites = np.asarray(sites, dtype=float)
        if self.sites.ndim != 1 or self.sites.size < 1:
            raise ValueError("sites must be a non-empty 1-D array")
        if np.any(self.sites <= 0.0) or np.any(self.sites >= 1.0):
            raise ValueError("sites must lie strictly inside (0, 1)")
        self.m = self.sites.size


def check_rate_design(N: int, m: int) -> None:
    """Warn when the site count outgrows sqrt(N); the contrast limit theory
    assumes m grows strictly slower than that."""
    if m > math.sqrt(N):
        warnings.warn(
            f"m={m} exceeds sqrt(N)={math.sqrt(N):.1f}; the contrast stage is "
            "outside its asymptotic design regime",
            RateConditionWarning,
            stacklevel=2,
        )


def two_stage_estimate(
    obs: FieldObservations,
    epsilon: float,
    spatial: ThinnedSpatialGrid,
    temporal: ThinnedTimeGrid,
    box=DEFAULT_SEARCH_BOX,
    rate_interval=DEFAULT_RATE_INTERVAL,
) -> EstimationResult:
    """Run both stages on observation slices.

    The slices must have been taken on ``spatial.sites`` and
    ``temporal.row_steps()``; this is checked, not assumed.
    """
    if obs.sites.size != spatial.m or not np.allclose(obs.sites, spatial.sites):
        raise ValueError("observation sites do not match the thinned spatial grid")
    if not np.array_equal(obs.row_steps, temporal.row_steps()):
        raise ValueError("observation rows do not match the thinned time grid")
    check_rate_design(obs.grid.N, spatial.m)

    z = realized_variations(obs.site_columns, obs.grid.T)
    rv = RealizedVariations(z=z, epsilon=NoiseLevel(epsilon), grid=spatial)
    stage1 = minimize_contrast(rv, box=box)

    series = approx_coordinate_series(obs.time_rows, stage1.eta_hat, obs.grid.M, k=1)
    lambda1 = maximize_loglik(series, epsilon, temporal, interval=rate_interval)
    theta0 = theta0_hat(lambda1, stage1.theta1_hat, stage1.theta2_hat)
    return EstimationResult(
        theta1_hat=stage1.theta1_hat,
        theta2_hat=stage1.theta2_hat,
        lambda1_hat=lambda1,
        theta0_hat=theta0,
        sigma0_sq_hat=stage1.sigma0_sq_hat,
        eta_hat=stage1.eta_hat,
        contrast_value=stage1.contrast_value,
        loglik_value=quasi_loglik(lambda1, series, epsilon, temporal),
        contrast=stage1,
    )


class MinimumContrastEstimator(BaseEstimator):
    """First-stage estimator of (theta1, theta2) from site time series.

    Parameters
    ----------
    epsilon : known dispersion level in (0, 1].
    duration : time horizon T spanned by the N+1 rows of X.
    sites : y-coordinates of the columns of X, strictly inside (0, 1).
    search_box : ((sigma0_sq lo, hi), (eta lo, hi)) search rectangle.

    Attributes (after ``fit``)
    --------------------------
    sigma0_sq_, eta_, theta1_, theta2_, contrast_value_, trace_, variations_
    """

    def __init__(self, epsilon=0.1, duration=1.0, sites=None, search_box=DEFAULT_SEARCH_BOX):
        self.epsilon = epsilon
        self.duration = duration
        self.sites = sites
        self.search_box = search_box

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.sites is None:
            raise ValueError("sites must be provided (y-coordinate of each column of X)")
        design = FreeSites(self.sites)
        if design.m != X.shape[1]:
            raise ValueError("sites must match the columns of X")
        z = realized_variations(X, self.duration)
        rv = RealizedVariations(z=z, epsilon=NoiseLevel(self.epsilon), grid=design)
        result = minimize_contrast(rv, box=self.search_box)
        self.sigma0_sq_ = result.sigma0_sq_hat
        self.eta_ = result.eta_hat
        self.theta1_ = result.theta1_hat
        self.theta2_ = result.theta2_hat
        self.contrast_value_ = result.contrast_value
        self.trace_ = result.trace
        self.variations_ = z
        return self


class OrnsteinUhlenbeckRateEstimator(BaseEstimator):
    """Quasi-likelihood estimator of the mean-reversion rate of an OU series.

    Parameters
    ----------
    epsilon : known dispersion level.
    step : spacing of the equally spaced observations.
    search_interval : (lo, hi) rate interval for the scan.

    Attributes (after ``fit``): ``rate_``, ``loglik_``.
    """

    def __init__(self, epsilon=0.1, step=0.002, search_interval=DEFAULT_RATE_INTERVAL):
        self.epsilon = epsilon
        self.step = step
        self.search_interval = search_interval

    def fit(self, X, y=None):
        series = np.asarray(X, dtype=float)
        if series.ndim == 2 and series.shape[1] == 1:
            series = series[:, 0]
        if series.ndim != 1 or series.size < 2:
            raise ValueError("X must be a series of at least two observations")
        n = series.size - 1
        grid = ThinnedTimeGrid(N2=n, N=n, T=n * self.step)
        wrapped = ApproxCoordinateSeries(k=1, values=series, eta_hat=0.0)
        self.rate_ = maximize_loglik(wrapped, self.epsilon, grid, interval=self.search_interval)
        self.loglik_ = quasi_loglik(self.rate_, wrapped, self.epsilon, grid)
        return self


class SPDEDriftEstimator(BaseEstimator):
    """Full two-stage drift estimator operating on the raw field matrix.

    Parameters
    ----------
    epsilon : known dispersion level in (0, 1].
    duration : time horizon T spanned by the N+1 rows of X.
    spatial_cutoff : half-width delta of the excluded boundary bands;
        rounded to the observation lattice.
    n_sites : thinned site count m (default N**0.45, clipped to the usable
        interior sites).
    n_row_times : thinned time count N2 (default min(N, 500)).
    search_box, rate_interval : passed through to the two stages.

    Attributes (after ``fit``)
    --------------------------
    theta0_, theta1_, theta2_, lambda1_, eta_, sigma0_sq_, result_
    """

    def __init__(
        self,
        epsilon=0.1,
        duration=1.0,
        spatial_cutoff=0.05,
        n_sites=None,
        n_row_times=None,
        search_box=DEFAULT_SEARCH_BOX,
        rate_interval=DEFAULT_RATE_INTERVAL,
    ):
        self.epsilon = epsilon
        self.duration = duration
        self.spatial_cutoff = spatial_cutoff
        self.n_sites = n_sites
        self.n_row_times = n_row_times
        self.search_box = search_box
        self.rate_interval = rate_interval

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[0] < 2 or X.shape[1] < 4:
            raise ValueError("X must hold at least 2 time rows and 4 spatial columns")
        N = X.shape[0] - 1
        M = X.shape[1]
        delta_eff = round(self.spatial_cutoff * M) / M
        if not (0.0 < delta_eff < 0.5):
            raise ValueError(f"spatial_cutoff rounds to {delta_eff}, outside (0, 1/2)")
        m_cap = ThinnedSpatialGrid(delta=delta_eff, m=1, M=M).M_bar
        m = self.n_sites if self.n_sites is not None else max(2, int(N**0.45))
        spatial = ThinnedSpatialGrid(delta=delta_eff, m=min(m, m_cap), M=M)
        n2 = self.n_row_times if self.n_row_times is not None else min(N, 500)
        temporal = ThinnedTimeGrid(N2=n2, N=N, T=self.duration)

        site_cols = np.rint(spatial.sites * M).astype(int)  # 1-based lattice index
        obs = FieldObservations(
            site_columns=X[:, site_cols - 1],
            sites=spatial.sites,
            time_rows=X[temporal.row_steps(), :],
            row_steps=temporal.row_steps(),
            grid=SimGrid(N=N, M=M, T=self.duration),
        )
        return self.fit_observations(obs, spatial, temporal)

    def fit_observations(
        self, obs: FieldObservations, spatial: ThinnedSpatialGrid, temporal: ThinnedTimeGrid
    ):
        """Fit from pre-sliced observations (no full matrix required)."""
        result = two_stage_estimate(
            obs,
            self.epsilon,
            spatial,
            temporal,
            box=self.search_box,
            rate_interval=self.rate_interval,
        )
        self.result_ = result
        self.theta0_ = result.theta0_hat
        self.theta1_ = result.theta1_hat
        self.theta2_ = result.theta2_hat
        self.lambda1_ = result.lambda1_hat
        self.eta_ = result.eta_hat
        self.sigma0_sq_ = result.sigma0_sq_hat
        return self

    @property
    def theta_(self) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise NotFittedError("this SPDEDriftEstimator instance is not fitted yet")
        return np.array([self.theta0_, self.theta1_, self.theta2_])
