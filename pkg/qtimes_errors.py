"""Exceptions and warnings shared by every qtimes module."""


class QTimesError(Exception):
    """Base class for toolkit errors."""


class ConfigError(QTimesError, ValueError):
    """Invalid parameter or rejected precondition."""


class NumericalError(QTimesError, RuntimeError):
    """A grid or quadrature could not reach the requested accuracy."""

    def __init__(self, message, estimate=None, tolerance=None):
        super().__init__(message)
        self.estimate = estimate
        self.tolerance = tolerance

    def __str__(self):
        base = super().__str__()
        if self.estimate is None:
            return base
        return f"{base} (estimate={self.estimate:.3e}, tolerance={self.tolerance:.3e})"


class ValidityWarning(UserWarning):
    """A formula is being evaluated outside the regime where it holds."""
