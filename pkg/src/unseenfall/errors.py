"""Exception hierarchy shared by every stage of the pipeline."""


class UnseenFallError(Exception):
    """Base class for all package errors."""


class ConfigError(UnseenFallError, ValueError):
    """Invalid configuration: bad dimensions, ranges, or enumerations."""


class InputError(UnseenFallError, ValueError):
    """An input vector, batch, or window does not fit the operation."""


class IngestionError(UnseenFallError, ValueError):
    """A data file could not be parsed. ``row`` is 1-based, header = row 1."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SelectionError(UnseenFallError, RuntimeError):
    """Model selection cannot proceed (e.g. no proxy falls to validate against)."""


class UndefinedMetricError(UnseenFallError, ZeroDivisionError):
    """A rate is undefined because one class is absent from the evaluation set."""
