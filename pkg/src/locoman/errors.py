"""Exception hierarchy.

Three broad families map onto the CLI exit codes: configuration problems
(exit 2), data problems (exit 3), and numerical failures (exit 4).
"""


class LocomanError(Exception):
    """Base class for all library errors."""


class ConfigError(LocomanError):
    """Bad or unknown configuration content."""


class DataError(LocomanError):
    """Malformed, inconsistent, or missing input data."""


class MalformedHeader(DataError):
    pass


class NonMonotonicTime(DataError):
    """Time decreases (or repeats) within one demonstration.

    ``row`` is the 1-based data-row index in the CSV file (header excluded).
    """

    def __init__(self, row: int, message: str | None = None):
        self.row = row
        super().__init__(message or f"time not strictly increasing at data row {row}")


class NonFiniteValue(DataError):
    def __init__(self, row: int | None = None, message: str | None = None):
        self.row = row
        super().__init__(message or f"non-finite or unparseable value at data row {row}")


class EmptySet(DataError):
    pass


class EmptyLog(DataError):
    pass


class InvalidAnchorTimes(DataError):
    pass


class DuplicateViaPoint(DataError):
    pass


class DimensionMismatch(LocomanError):
    pass


class NumericalError(LocomanError):
    """Base class for numerical failures."""


class InsufficientData(NumericalError):
    pass


class DegenerateComponent(NumericalError):
    pass


class SingularInputVariance(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    pass


class NumericalBreakdown(NumericalError):
    pass


class Level1Infeasible(NumericalError):
    """The primary-task constraint box is empty; limits are misconfigured."""
