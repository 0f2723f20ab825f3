"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three categories below rather than Exception.
"""


class GmamsError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GmamsError, ValueError):
    """Invalid design parameters, boundaries, or configuration input."""


class InfeasibilityError(GmamsError):
    """No design satisfying the requested constraints exists in the search box."""


class NumericError(GmamsError):
    """A numeric routine failed (non-factorizable covariance, divergence, ...)."""


class CalibrationError(NumericError):
    """Triangular calibration did not reach the requested residual.

    Carries the best point found so callers can inspect how close it got.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
