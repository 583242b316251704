"""Drift estimation for a small-dispersion parabolic SPDE on [0, T] x [0, 1].

Spectral simulator with exact OU coordinate transitions, two-stage estimation
(minimum contrast for the transport coefficients, adaptive quasi-likelihood
for the reaction coefficient), limit-law constants, and a reproducible
Monte-Carlo harness with a CLI.
"""

from .asymptotics import (
    AsymptoticCovariance,
    covariance_matrices,
    g_fisher,
    gamma_const,
    standardize,
    uv_matrices,
    w_matrix,
)
from .contrast import (
    ContrastEstimate,
    RealizedVariations,
    ThinnedSpatialGrid,
    contrast,
    minimize_contrast,
    realized_variation,
    realized_variations,
)
from .estimators import (
    EstimationResult,
    MinimumContrastEstimator,
    OrnsteinUhlenbeckRateEstimator,
    SPDEDriftEstimator,
    two_stage_estimate,
)
from .exceptions import (
    BoundaryWarning,
    ConfigError,
    ConsistencyWarning,
    ContrastOptimizationError,
    DegenerateDataWarning,
    EstimationWarning,
    ExtrapolationWarning,
    RateConditionWarning,
    SimulationSizeError,
)
from .experiment import (
    ExperimentConfig,
    NormalityDiagnostics,
    ReplicateResult,
    SummaryStats,
    normality_diagnostics,
    run_experiment,
    run_replicate,
)
from .likelihood import (
    ApproxCoordinateSeries,
    ThinnedTimeGrid,
    approx_coordinate,
    approx_coordinate_series,
    maximize_loglik,
    profile_loglik,
    quasi_loglik,
    theta0_hat,
    xi_factor,
)
from .model import (
    InitialCondition,
    NoiseLevel,
    ThetaParams,
    eigenfunction,
    initial_coefficient,
    initial_coefficients,
    lambda_k,
    theta_from_reparam,
    weighted_inner_product,
)
from .simulate import (
    CoordinatePaths,
    FieldObservations,
    RngStream,
    SimGrid,
    dump_observations,
    load_observations,
    observe_field,
    ou_step,
    simulate_coordinates,
    synthesize_field_at,
    synthesize_row_fast,
)

__version__ = "0.1.0"

__all__ = [
    "ApproxCoordinateSeries",
    "AsymptoticCovariance",
    "BoundaryWarning",
    "ConfigError",
    "ConsistencyWarning",
    "ContrastEstimate",
    "ContrastOptimizationError",
    "CoordinatePaths",
    "DegenerateDataWarning",
    "EstimationResult",
    "EstimationWarning",
    "ExperimentConfig",
    "ExtrapolationWarning",
    "FieldObservations",
    "InitialCondition",
    "MinimumContrastEstimator",
    "NoiseLevel",
    "NormalityDiagnostics",
    "OrnsteinUhlenbeckRateEstimator",
    "RateConditionWarning",
    "RealizedVariations",
    "ReplicateResult",
    "RngStream",
    "SPDEDriftEstimator",
    "SimGrid",
    "SimulationSizeError",
    "SummaryStats",
    "ThetaParams",
    "ThinnedSpatialGrid",
    "ThinnedTimeGrid",
    "contrast",
    "covariance_matrices",
    "dump_observations",
    "eigenfunction",
    "g_fisher",
    "gamma_const",
    "initial_coefficient",
    "initial_coefficients",
    "lambda_k",
    "load_observations",
    "maximize_loglik",
    "minimize_contrast",
    "normality_diagnostics",
    "observe_field",
    "ou_step",
    "profile_loglik",
    "quasi_loglik",
    "realized_variation",
    "realized_variations",
    "run_experiment",
    "run_replicate",
    "simulate_coordinates",
    "standardize",
    "synthesize_field_at",
    "synthesize_row_fast",
    "theta0_hat",
    "theta_from_reparam",
    "two_stage_estimate",
    "uv_matrices",
    "w_matrix",
    "weighted_inner_product",
    "xi_factor",
]
