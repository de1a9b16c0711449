"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
ExperimentError -> 4.
"""


class QtFraudError(Exception):
    """Base class for package errors."""


class ConfigError(QtFraudError):
    """Invalid or inconsistent configuration."""


class DataError(QtFraudError):
    """Malformed or unusable input data."""


class ParseError(DataError):
    """Syntactically invalid input; message names the offending line."""


class ValidationError(DataError):
    """Input violates a documented precondition or invariant."""


class CapacityError(ValidationError):
    """Graph exceeds the dense-simulation qubit budget."""


class TrainingError(QtFraudError):
    """Non-finite loss or gradient during optimization."""


class ExperimentError(QtFraudError):
    """A property experiment failed its assertion or lacks data."""
