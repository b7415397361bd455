"""Exception hierarchy shared across the package."""


class RecalibError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RecalibError, ValueError):
    """A design, population or run configuration is inconsistent."""


class SchemaError(ConfigurationError):
    """A population file lacks a required column."""


class PopulationParseError(ConfigurationError):
    """A population file cell could not be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyPopulationError(ConfigurationError):
    """A population file holds no data rows."""


class EstimationError(RecalibError):
    """An estimator could not be evaluated on the given sample."""


class RankDeficiencyError(EstimationError):
    """A Gram or covariance matrix failed the conditioning gate."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(message)
        self.condition = condition


class DesignSupportError(EstimationError):
    """A required inclusion probability is zero."""


class UnsupportedOperationError(EstimationError):
    """The operation is undefined for the design kind."""


class EnumerationCapError(RecalibError):
    """Exhaustive enumeration would exceed the configured sample cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"enumeration needs {count} samples, cap is {cap}")
        self.count = count
        self.cap = cap


class ExperimentAborted(RecalibError):
    """Too many replications failed."""

    def __init__(self, message: str, failures: dict[str, int]):
        super().__init__(message)
        self.failures = failures


class DegenerateDirectionWarning(UserWarning):
    """A covariance matrix is singular along some direction."""
