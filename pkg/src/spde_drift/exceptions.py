"""Shared exception types and warning categories."""


class EstimationWarning(UserWarning):
    """Base category for diagnostics emitted while estimating."""


class BoundaryWarning(EstimationWarning):
    """An optimizer landed near the edge of its search region."""


class DegenerateDataWarning(EstimationWarning):
    """The data cannot identify the requested quantity."""


class RateConditionWarning(EstimationWarning):
    """A sampling-design ratio is outside the regime the limit theory assumes."""


class ExtrapolationWarning(EstimationWarning):
    """A closed-form constant is used outside its stated range of validity."""


class ConsistencyWarning(EstimationWarning):
    """Two redundant configuration inputs disagree."""


class ContrastOptimizationError(RuntimeError):
    """Simplex refinement failed to reach the coarse-scan contrast value."""


class SimulationSizeError(RuntimeError):
    """A requested trajectory matrix exceeds the configured memory cap."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
