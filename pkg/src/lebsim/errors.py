"""Exception types shared across the package."""


class LebSimError(Exception):
    """Base class for all package errors."""


class ParameterError(LebSimError, ValueError):
    """An argument is outside its documented domain."""


class FormatError(LebSimError, ValueError):
    """A trace or config file does not follow its documented format."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(LebSimError):
    """Training data cannot support calibration (e.g. a single class)."""


class StateError(LebSimError, RuntimeError):
    """An operation was called on an object in the wrong lifecycle state."""


class ConfigError(LebSimError):
    """A scenario configuration is missing or invalid."""
