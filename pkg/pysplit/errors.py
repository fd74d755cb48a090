from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from pysplit.krylov import SolveReport


class PysplitError(Exception):
    """Base class of all errors raised by this package."""


class InvalidGridError(PysplitError, ValueError):
    """A grid is degenerate or a point lies outside it."""


class GridMismatchError(PysplitError, ValueError):
    """Two fields or maps live on different grids."""


class NotNonNegativeError(PysplitError, ValueError):
    """A quadratic form expected to be non-negative came out negative."""


class InvalidCoefficientError(PysplitError, ValueError):
    """A model coefficient or scheme weight is negative or not finite."""


class ModeIndexError(PysplitError, ValueError):
    """An eigenmode index lies outside `1..N-1`."""


class DimensionTooLargeError(PysplitError, ValueError):
    """A dense check was requested for a grid above the dimension cap."""


class ConfigError(PysplitError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class IterationLimitError(PysplitError, RuntimeError):
    """
    An iterative method did not converge within its iteration cap.

    Args:
        message: The error message.
        report: The solver report at the moment of giving up, if any.
    """

    def __init__(self, message: str, report: Optional["SolveReport"] = None) -> None:
        super().__init__(message)
        self.report = report


class NumericalBreakdownError(PysplitError, ArithmeticError):
    """A NaN, an infinity or a non-positive curvature showed up in a solve."""


class StepError(PysplitError, RuntimeError):
    """
    Stepping failed at a given time level.

    Args:
        level: The index of the level that was being computed.
        cause: The original error.
    """

    def __init__(self, level: int, cause: Exception) -> None:
        super().__init__(f"Step to level {level} failed: {cause}")
        self.level = level
        self.cause = cause


class InstabilityError(PysplitError, RuntimeError):
    """A run expected to be stable blew up."""
