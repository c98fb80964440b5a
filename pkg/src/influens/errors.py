"""Exception hierarchy shared across the package.

Validation errors (bad user input) and numerical errors (a solver or
fit failed at runtime) are kept on separate branches so the CLI can map
them to distinct exit codes.
"""


class InfluensError(Exception):
    """Base class for all package errors."""


class ValidationError(InfluensError):
    """Input violates a documented precondition."""


class DimensionMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class DegenerateResponse(ValidationError):
    """Logistic response with fewer than two classes."""


class InvalidParameter(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class IdentifiabilityViolation(ValidationError):
    """Mixture order too large for the support to identify."""


class NumericalError(InfluensError):
    """A numerical routine failed to produce a usable result."""


class NonConvergence(NumericalError):
    """Iteration cap hit; carries the last iterate when available."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class ZeroResidual(NumericalError):
    """Residual scale underflowed; signals an interpolating fit."""


class FoldDegeneracy(NumericalError):
    """Could not form CV folds with both classes in every training set."""


class AllZeroData(NumericalError):
    """Every count is zero; all count families degenerate."""


class ZeroVariance(NumericalError):
    """Sample variance is zero where a spread estimate is required."""


class ZeroSdColumn(NumericalError):
    """A predictor column is constant after case deletion."""


class ClusterDegeneracy(NumericalError):
    """Spectral clustering produced an empty cluster."""
