"""Exception hierarchy and CLI exit codes."""


class RadetError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class NumericError(RadetError):
    """Non-finite values or failed numeric sanity checks."""

    exit_code = 1


class ConfigurationError(RadetError):
    """Invalid configuration: bad dimensions, unknown keys, out-of-range values."""

    exit_code = 2


class DomainError(RadetError):
    """Input outside the mathematical domain of an operation."""

    exit_code = 1


class DataFormatError(RadetError):
    """Malformed on-disk artifact (checkpoint, embedding file, dataset)."""

    exit_code = 3


EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2
EXIT_IO = 3
