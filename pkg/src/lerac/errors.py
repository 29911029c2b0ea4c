"""Exception types raised across the package."""


class LeracError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LeracError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(LeracError, ValueError):
    """An argument or configuration value is out of its allowed range."""


class NumericError(LeracError, ArithmeticError):
    """A computation produced a non-finite value."""


class StateError(LeracError, RuntimeError):
    """An operation was called in the wrong object state."""


class FormatError(LeracError, ValueError):
    """A file does not follow the expected binary or text layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DatasetEmptyError(LeracError, ValueError):
    """A data source contained no samples."""


class ConfigError(LeracError, ValueError):
    """An experiment configuration is invalid."""
