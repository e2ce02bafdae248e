"""Exception hierarchy shared by every module."""


class QfmcwError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QfmcwError, ValueError):
    """Invalid or inconsistent configuration value."""


class RegimeError(QfmcwError, ValueError):
    """An approximation's validity regime is violated (e.g. delay too long)."""


class DomainError(QfmcwError, ValueError):
    """Argument outside the domain of a piecewise law (e.g. t outside a window)."""


class ConsistencyError(QfmcwError, ArithmeticError):
    """Internal numerical inconsistency larger than rounding can explain."""


class ToleranceError(QfmcwError, ArithmeticError):
    """A numerical procedure failed to reach the requested accuracy."""


class SingularMatrixError(QfmcwError, ArithmeticError):
    """Information matrix cannot be inverted."""

    def __init__(self, message: str, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class UnsupportedError(QfmcwError, NotImplementedError):
    """Operation not defined for the requested waveform family."""
