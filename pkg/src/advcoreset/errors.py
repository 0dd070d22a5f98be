"""Exception hierarchy shared across the package."""


class AdvCoresetError(Exception):
    """Base class for all package errors."""


class DimensionError(AdvCoresetError):
    """Array shapes are inconsistent with the model or data."""


class NumericError(AdvCoresetError):
    """Non-finite values where finite numbers are required."""


class CacheError(AdvCoresetError):
    """A forward cache does not match the parameters/batch it is used with."""


class DegenerateProblemError(AdvCoresetError):
    """The closed-form maximizer is not unique (e.g. a zero weight coordinate)."""


class EmptyInputError(AdvCoresetError):
    """A solver was handed an empty feature set."""


class SizeLimitError(AdvCoresetError):
    """A brute-force oracle was asked to exceed its instance-size limits."""


class SolverConvergenceError(AdvCoresetError):
    """An iterative solver stopped before meeting its KKT/residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(AdvCoresetError):
    """Bad configuration: unknown key, unparsable value, or missing file."""


class CsvFormatError(ConfigError):
    """Malformed dataset CSV; carries the 1-based offending line number."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
