"""Exception hierarchy.

Each class carries the CLI exit code it maps to (1 usage, 2 data, 3 numerical).
"""


class RegPathError(Exception):
    exit_code = 1


class ConfigError(RegPathError, ValueError):
    """Inconsistent or invalid configuration."""

    exit_code = 1


class DataError(RegPathError, ValueError):
    """Malformed, misaligned, or insufficient input data."""

    exit_code = 2


class DimensionError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class AlignmentError(DataError):
    pass


class NumericalError(RegPathError, ArithmeticError):
    exit_code = 3


class DomainError(NumericalError):
    """A matrix argument is outside the domain of the function (e.g. not PD)."""


class SingularityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    ``last_iterate`` and ``trace`` hold the state when it stopped.
    """

    def __init__(self, message, last_iterate=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.trace = trace


class DegenerateInputError(DataError):
    """Input is well formed but degenerate (zero variance, too few points)."""
