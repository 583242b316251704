"""Constants and matrices of the joint limit law of the three estimators.

The standardized errors ``(sqrt(N*m)*(theta2_hat - theta2), sqrt(N*m)*
(theta1_hat - theta1), (theta0_hat - theta0)/epsilon)`` are asymptotically
centered Gaussian with block-diagonal covariance ``diag(J, 1/G)``: ``J`` is
the delta-method image of the reparametrized covariance ``K`` under the
Jacobian ``W`` of ``(theta2, theta1)`` with respect to ``(sigma0_sq, eta)``,
and ``G`` is the small-noise Fisher information of the rate estimate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateDataWarning, ExtrapolationWarning
from .model import ThetaParams, lambda_k

#: Chunk length for the tail sum of the universal constant.
_GAMMA_CHUNK = 1_000_000


def gamma_const(tolerance: float = 1e-12) -> float:
    """Universal constant (1/pi) * sum_{r>=0} I(r)^2 + 2/pi with
    I(r) = 2*sqrt(r+1) - sqrt(r+2) - sqrt(r).

    The sum is truncated once the analytic tail bound ``1/(32*pi*(R-1)^2)``
    (from ``I(r) <= r^(-3/2)/4``) drops below ``tolerance``.  Terms are
    evaluated in the cancellation-free form
    ``1/(sqrt(r+1)+sqrt(r)) - 1/(sqrt(r+2)+sqrt(r+1))``.
    """
    if not (tolerance > 0.0):
        raise ValueError("tolerance must be positive")
    n_terms = 2 + int(math.ceil(math.sqrt(1.0 / (32.0 * math.pi * tolerance))))
    total = 0.0
    for start in range(0, n_terms, _GAMMA_CHUNK):
        r = np.arange(start, min(start + _GAMMA_CHUNK, n_terms), dtype=float)
        i_r = 1.0 / (np.sqrt(r + 1.0) + np.sqrt(r)) - 1.0 / (np.sqrt(r + 2.0) + np.sqrt(r + 1.0))
        total += float(i_r @ i_r)
    return total / math.pi + 2.0 / math.pi


def _exp_moments(a: float, lo: float, hi: float) -> tuple[float, float, float]:
    """Integrals of y^p * exp(-a*y) over [lo, hi] for p = 0, 1, 2.

    Closed antiderivatives for |a| >= 0.5; below that the 1/a^3 terms cancel
    catastrophically, so a 26-term power series in ``a`` (exact at a = 0)
    takes over.
    """
    if abs(a) < 0.5:
        q = np.arange(26, dtype=float)
        coeff = np.cumprod(np.concatenate(([1.0], -a / np.arange(1.0, 26.0))))  # (-a)^q / q!
        out = []
        for p in range(3):
            powers = (hi ** (p + q + 1) - lo ** (p + q + 1)) / (p + q + 1)
            out.append(float(coeff @ powers))
        return out[0], out[1], out[2]
    e_lo = math.exp(-a * lo)
    e_hi = math.exp(-a * hi)
    f0 = (e_lo - e_hi) / a
    f1 = (lo / a + 1.0 / a**2) * e_lo - (hi / a + 1.0 / a**2) * e_hi
    f2 = (lo**2 / a + 2.0 * lo / a**2 + 2.0 / a**3) * e_lo - (
        hi**2 / a + 2.0 * hi / a**2 + 2.0 / a**3
    ) * e_hi
    return f0, f1, f2


def uv_matrices(eta_star: float, theta2_star: float, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Design matrices of exponential moments over [delta, 1 - delta].

    U uses weight exp(-4*eta*y), V uses exp(-2*eta*y); off-diagonals carry
    -1/sqrt(theta2), the (2, 2) entries 1/theta2.
    """
    if not (0.0 < delta < 0.5):
        raise ValueError("delta must lie in (0, 1/2)")
    if not (theta2_star > 0.0):
        raise ValueError("theta2_star must be positive")
    lo, hi = delta, 1.0 - delta
    root = math.sqrt(theta2_star)

    def build(a: float) -> np.ndarray:
        f0, f1, f2 = _exp_moments(a, lo, hi)
        return np.array([[f0, -f1 / root], [-f1 / root, f2 / theta2_star]])

    return build(4.0 * eta_star), build(2.0 * eta_star)


def w_matrix(theta1_star: float, theta2_star: float) -> np.ndarray:
    """Jacobian of (theta2, theta1) with respect to (sigma0_sq, eta)."""
    if not (theta2_star > 0.0):
        raise ValueError("theta2_star must be positive")
    root = math.sqrt(theta2_star)
    return np.array([[-2.0 * theta2_star * root, 0.0], [-2.0 * theta1_star * root, theta2_star]])


@dataclass(frozen=True)
class AsymptoticCovariance:
    """Everything the limit law needs, assembled at one parameter point."""

    gamma: float
    u_mat: np.ndarray
    v_mat: np.ndarray
    w_mat: np.ndarray
    j_mat: np.ndarray
    k_mat: np.ndarray
    g_fisher: float | None
    delta: float


def _inverse_2x2(mat: np.ndarray) -> np.ndarray:
    eigenvalues = np.linalg.eigvalsh(mat)
    smallest = float(np.min(np.abs(eigenvalues)))
    largest = float(np.max(np.abs(eigenvalues)))
    if smallest == 0.0 or largest / smallest > 1e12:
        raise np.linalg.LinAlgError(
            f"matrix is numerically singular (condition number > 1e12): eigenvalues {eigenvalues}"
        )
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    return np.array([[mat[1, 1], -mat[0, 1]], [-mat[1, 0], mat[0, 0]]]) / det


def covariance_matrices(
    theta_star: ThetaParams, delta: float, gamma_tolerance: float = 1e-12
) -> AsymptoticCovariance:
    """Assemble K (reparametrized covariance) and J = W K W^T at theta_star.

    The 2x2 inverse of V uses the adjugate formula after an explicit
    condition-number check (> 1e12 raises ``numpy.linalg.LinAlgError``).
    """
    gamma = gamma_const(gamma_tolerance)
    u_mat, v_mat = uv_matrices(theta_star.eta, theta_star.theta2, delta)
    w_mat = w_matrix(theta_star.theta1, theta_star.theta2)
    v_inv = _inverse_2x2(v_mat)
    k_mat = (math.pi * gamma / theta_star.theta2) * (v_inv @ u_mat @ v_inv)
    j_mat = w_mat @ k_mat @ w_mat.T
    return AsymptoticCovariance(
        gamma=gamma,
        u_mat=u_mat,
        v_mat=v_mat,
        w_mat=w_mat,
        j_mat=j_mat,
        k_mat=k_mat,
        g_fisher=None,
        delta=delta,
    )


def g_fisher(lambda_star: float, x1_0: float, horizon: float = 1.0) -> float:
    """Small-noise information of the rate estimate:
    ``x1_0^2 * (1 - exp(-2*lambda_star*horizon)) / (2*lambda_star)``.

    The limit variance of the standardized theta0 error is its reciprocal.
    The printed constant presumes a unit horizon; passing ``horizon != 1``
    substitutes the horizon into the exponent and flags the extrapolation.
    """
    if not (lambda_star > 0.0):
        raise ValueError(f"lambda_star must be positive, got {lambda_star!r}")
    if horizon != 1.0:
        if not (horizon > 0.0):
            raise ValueError("horizon must be positive")
        warnings.warn(
            f"information constant extrapolated to horizon {horizon!r}",
            ExtrapolationWarning,
            stacklevel=2,
        )
    if x1_0 == 0.0:
        warnings.warn(
            "zero first-mode initial coordinate gives zero information",
            DegenerateDataWarning,
            stacklevel=2,
        )
    return float(x1_0**2 * (-np.expm1(-2.0 * lambda_star * horizon)) / (2.0 * lambda_star))


def standardize(est, truth: ThetaParams, N: int, m: int, epsilon: float) -> np.ndarray:
    """Standardized error vector in the limit-law scaling.

    ``est`` needs attributes ``theta1_hat``, ``theta2_hat``, ``theta0_hat``.
    Order matches the limit law: theta2 error, theta1 error, theta0 error.
    """
    if not (epsilon > 0.0):
        raise ValueError("epsilon must be positive")
    root = math.sqrt(N * m)
    return np.array(
        [
            root * (est.theta2_hat - truth.theta2),
            root * (est.theta1_hat - truth.theta1),
            (est.theta0_hat - truth.theta0) / epsilon,
        ]
    )


def report(
    theta_star: ThetaParams,
    delta: float,
    x1_0: float,
    horizon: float = 1.0,
    gamma_tolerance: float = 1e-12,
) -> dict:
    """JSON-ready dump of every limit-law constant at one parameter point."""
    cov = covariance_matrices(theta_star, delta, gamma_tolerance)
    lambda1_star = lambda_k(theta_star, 1)
    if lambda1_star > 0.0:
        g = g_fisher(lambda1_star, x1_0, horizon)
        g_inverse = 1.0 / g if g > 0.0 else math.inf
    else:
        g = None
        g_inverse = None
    return {
        "theta_star": theta_star.as_array().tolist(),
        "eta_star": theta_star.eta,
        "sigma0_sq_star": theta_star.sigma0_sq,
        "lambda1_star": float(lambda1_star),
        "delta": delta,
        "x1_0": x1_0,
        "horizon": horizon,
        "gamma": cov.gamma,
        "u_mat": cov.u_mat.tolist(),
        "v_mat": cov.v_mat.tolist(),
        "w_mat": cov.w_mat.tolist(),
        "k_mat": cov.k_mat.tolist(),
        "j_mat": cov.j_mat.tolist(),
        "g_fisher": g,
        "g_fisher_inverse": g_inverse,
        "standardized_variances": {
            "theta2": cov.j_mat[0, 0],
            "theta1": cov.j_mat[1, 1],
            "theta0": g_inverse,
        },
    }
