"""Exception types shared across the package."""


class PeakrefError(Exception):
    """Base class for all package errors."""


class RangeError(PeakrefError):
    """A model parameter is outside its admissible range."""


class ScopeError(PeakrefError):
    """Parameters request a model variant outside the supported scope (rho != r)."""


class AssumptionA1Violated(PeakrefError):
    """Curvature parameters violate the root condition beta_j < -r2/r1."""


class DomainError(PeakrefError):
    """State argument outside the domain of a closed-form expression."""


class ConvergenceError(PeakrefError):
    """A bracketed root search failed to converge."""


class QuadratureError(PeakrefError):
    """Improper-integral tail is not integrable or could not be resolved."""


class ConfigError(PeakrefError):
    """Invalid simulation or run configuration."""


class CIConflict(PeakrefError):
    """Analytic and Monte Carlo calibration routes disagree beyond 3 standard errors."""


class NormalizationUnresolved(PeakrefError):
    """The hitting-time normalization closure failed validation.

    Raised instead of silently returning a number when the backward
    integration of the hitting-time coefficients does not stabilize under
    refinement of the upper integration limit, or when the result fails the
    Monte Carlo cross-check.  Carries diagnostics in ``details``.
    """

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or {}
