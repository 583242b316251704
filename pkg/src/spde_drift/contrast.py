"""First estimation stage: squared-increment statistics on thinned spatial
sites and least-squares inversion of their spatial profile.

The normalized sum of squared time increments at a fixed site converges to
``epsilon^2 * (sigma0_sq/sqrt(pi)) * exp(-eta*y)``, so fitting that curve over
a handful of interior sites identifies ``(sigma0_sq, eta)`` and hence
``(theta1, theta2)``.  Optimization runs in the ``(sigma0_sq, eta)``
coordinates, where the objective is much better conditioned, and maps back
through :func:`~spde_drift.model.theta_from_reparam`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .exceptions import BoundaryWarning, ContrastOptimizationError, DegenerateDataWarning
from .model import NoiseLevel, theta_from_reparam

#: Default search rectangle for (sigma0_sq, eta): two orders of magnitude of
#: margin around every regime exercised in the experiments.
DEFAULT_SEARCH_BOX = ((1e-2, 1e2), (-20.0, 20.0))

#: Coarse scan resolution (sigma0_sq points, eta points).
DEFAULT_GRID_SHAPE = (64, 64)


@dataclass(frozen=True)
class ThinnedSpatialGrid:
    """m equally spaced interior sites inside [delta, 1 - delta].

    With ``M_bar = 1 + floor((1 - 2*delta) * M)`` the sites are
    ``delta + floor(M_bar/m) * (j - 1) / M`` for j = 1..m; they stay on the
    observation lattice whenever ``delta * M`` is an integer.
    """

    delta: float
    m: int
    M: int

    def __post_init__(self) -> None:
        if not (0.0 < self.delta < 0.5):
            raise ValueError("delta must lie in (0, 1/2)")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.m > self.M_bar:
            raise ValueError(f"m={self.m} exceeds the {self.M_bar} usable interior sites")

    @property
    def M_bar(self) -> int:
        # 1e-9 nudge so float dust cannot drop a site when (1-2*delta)*M is integral
        return 1 + int(math.floor((1.0 - 2.0 * self.delta) * self.M + 1e-9))

    @property
    def stride(self) -> int:
        return self.M_bar // self.m

    @property
    def sites(self) -> np.ndarray:
        out = self.delta + self.stride * np.arange(self.m) / self.M
        # guaranteed by construction; kept as a hard check because every
        # downstream quantity assumes the window
        if out[0] < self.delta - 1e-12 or out[-1] > 1.0 - self.delta + 1e-12:
            raise AssertionError("thinned sites escaped [delta, 1-delta]")
        return out


def realized_variation(column: np.ndarray, N: int, T: float) -> float:
    """Normalized squared time increments of one site series.

    ``column`` holds the field at times t_0..t_N for a single site; the
    normalization is 1 / (N * sqrt(T/N)).
    """
    col = np.asarray(column, dtype=float)
    if col.ndim != 1 or col.size != N + 1:
        raise ValueError(f"column must hold N+1={N + 1} values")
    if not (T > 0.0):
        raise ValueError("T must be positive")
    increments = np.diff(col)
    return float(increments @ increments / (N * math.sqrt(T / N)))


def realized_variations(site_columns: np.ndarray, T: float) -> np.ndarray:
    """Vectorized :func:`realized_variation` over the site axis."""
    cols = np.asarray(site_columns, dtype=float)
    if cols.ndim != 2:
        raise ValueError("site_columns must be (N+1, m)")
    N = cols.shape[0] - 1
    increments = np.diff(cols, axis=0)
    return np.einsum("ij,ij->j", increments, increments) / (N * math.sqrt(T / N))


@dataclass(frozen=True)
class RealizedVariations:
    """Per-site variation statistics plus the design they were computed on."""

    z: np.ndarray
    epsilon: NoiseLevel
    grid: ThinnedSpatialGrid

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 1 or z.size != self.grid.m:
            raise ValueError("z must have one entry per thinned site")
        if not np.all(np.isfinite(z)):
            raise ValueError("realized variations must be finite")
        if np.any(z < 0.0):
            raise ValueError("realized variations cannot be negative")
        object.__setattr__(self, "z", z)

    @property
    def rescaled(self) -> np.ndarray:
        return self.z / self.epsilon.epsilon**2


def profile_curve(sigma0_sq: float, eta: float, sites: np.ndarray) -> np.ndarray:
    """Theoretical site profile (sigma0_sq / sqrt(pi)) * exp(-eta * y)."""
    return sigma0_sq / math.sqrt(math.pi) * np.exp(-eta * np.asarray(sites, dtype=float))


def contrast(sigma0_sq: float, eta: float, rv: RealizedVariations) -> float:
    """Mean squared deviation between rescaled variations and the profile."""
    if not (sigma0_sq > 0.0):
        raise ValueError(f"sigma0_sq must be positive, got {sigma0_sq!r}")
    resid = rv.rescaled - profile_curve(sigma0_sq, eta, rv.grid.sites)
    return float(resid @ resid / rv.grid.m)


@dataclass(frozen=True)
class OptimizerTrace:
    """Running best contrast values (non-increasing by construction)."""

    best_values: np.ndarray
    n_grid_evaluations: int
    n_refine_evaluations: int


@dataclass(frozen=True)
class ContrastEstimate:
    sigma0_sq_hat: float
    eta_hat: float
    theta1_hat: float
    theta2_hat: float
    contrast_value: float
    trace: OptimizerTrace


def minimize_contrast(
    rv: RealizedVariations,
    box=DEFAULT_SEARCH_BOX,
    grid_shape=DEFAULT_GRID_SHAPE,
    fatol: float = 1e-10,
    xatol: float = 1e-9,
    maxfev: int = 10_000,
) -> ContrastEstimate:
    """Two-stage contrast minimization over the box ``((s_lo, s_hi), (eta_lo, eta_hi))``.

    A coarse scan (log-spaced in sigma0_sq, linear in eta; ties resolved
    toward smaller eta, then smaller sigma0_sq) seeds a Nelder-Mead
    refinement.  Raises :class:`ContrastOptimizationError` when refinement
    cannot match the scan, and warns when the optimum hugs the box edge
    (within 1% on the scan scale) or when a single site makes the two
    parameters non-identifiable.
    """
    (s_lo, s_hi), (eta_lo, eta_hi) = box
    if not (0.0 < s_lo < s_hi):
        raise ValueError("sigma0_sq bounds must be positive and increasing")
    if not (eta_lo < eta_hi):
        raise ValueError("eta bounds must be increasing")
    if rv.grid.m < 2:
        warnings.warn(
            "a single site cannot identify both sigma0_sq and eta",
            DegenerateDataWarning,
            stacklevel=2,
        )

    target = rv.rescaled
    sites = rv.grid.sites
    inv_sqrt_pi = 1.0 / math.sqrt(math.pi)

    def objective(sigma0_sq: float, eta: float) -> float:
        if not (sigma0_sq > 0.0) or not np.isfinite(sigma0_sq) or not np.isfinite(eta):
            return math.inf
        resid = target - sigma0_sq * inv_sqrt_pi * np.exp(-eta * sites)
        return float(resid @ resid) / sites.size

    n_s, n_eta = grid_shape
    s_grid = np.geomspace(s_lo, s_hi, n_s)
    eta_grid = np.linspace(eta_lo, eta_hi, n_eta)
    curves = s_grid[None, :, None] * inv_sqrt_pi * np.exp(-eta_grid[:, None, None] * sites[None, None, :])
    grid_values = np.mean((target[None, None, :] - curves) ** 2, axis=2)
    flat_best = int(np.argmin(grid_values))  # first minimum: smallest eta, then smallest sigma0_sq
    i_eta, i_s = divmod(flat_best, n_s)
    best_grid = float(grid_values[i_eta, i_s])
    if not math.isfinite(best_grid):
        raise ContrastOptimizationError("contrast is not finite anywhere on the scan grid")

    trace_values = [best_grid]
    best = {"value": best_grid, "x": (float(s_grid[i_s]), float(eta_grid[i_eta]))}
    n_refine = 0

    def wrapped(xy) -> float:
        nonlocal n_refine
        n_refine += 1
        value = objective(float(xy[0]), float(xy[1]))
        if value < best["value"]:
            best["value"] = value
            best["x"] = (float(xy[0]), float(xy[1]))
        trace_values.append(best["value"])
        return value

    scipy.optimize.minimize(
        wrapped,
        x0=np.array(best["x"]),
        method="Nelder-Mead",
        options={"fatol": fatol, "xatol": xatol, "maxfev": maxfev},
    )
    if best["value"] > best_grid:
        raise ContrastOptimizationError(
            f"refinement ended above the scan value ({best['value']:.6g} > {best_grid:.6g})"
        )

    sigma0_sq_hat, eta_hat = best["x"]
    log_width = math.log(s_hi / s_lo)
    if (
        math.log(sigma0_sq_hat / s_lo) < 0.01 * log_width
        or math.log(s_hi / sigma0_sq_hat) < 0.01 * log_width
    ):
        warnings.warn(
            f"sigma0_sq estimate {sigma0_sq_hat:.6g} is within 1% of the search box edge",
            BoundaryWarning,
            stacklevel=2,
        )
    if min(eta_hat - eta_lo, eta_hi - eta_hat) < 0.01 * (eta_hi - eta_lo):
        warnings.warn(
            f"eta estimate {eta_hat:.6g} is within 1% of the search box edge",
            BoundaryWarning,
            stacklevel=2,
        )

    theta2_hat, theta1_hat = theta_from_reparam(sigma0_sq_hat, eta_hat)
    return ContrastEstimate(
        sigma0_sq_hat=sigma0_sq_hat,
        eta_hat=eta_hat,
        theta1_hat=theta1_hat,
        theta2_hat=theta2_hat,
        contrast_value=best["value"],
        trace=OptimizerTrace(
            best_values=np.asarray(trace_values),
            n_grid_evaluations=n_s * n_eta,
            n_refine_evaluations=n_refine,
        ),
    )
