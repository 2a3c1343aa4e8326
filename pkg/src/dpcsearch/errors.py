"""Exception hierarchy shared across the package.

Each CLI-facing error class maps to one process exit code so scripted
callers can distinguish configuration mistakes from data problems and
numerical blow-ups.
"""


class DPCSearchError(Exception):
    """Base class for all package errors."""


class ConfigError(DPCSearchError):
    """Invalid configuration value or malformed config file. Exit code 2."""

    exit_code = 2


class ValidationError(ConfigError):
    """A genotype or argument violates a documented precondition."""


class DataError(DPCSearchError):
    """Missing, corrupt, or inconsistent dataset/cache input. Exit code 3."""

    exit_code = 3


class GenotypeParseError(DataError):
    """Genotype JSON text that cannot be parsed into a genotype."""


class StaleCacheError(DataError):
    """On-disk feature cache was built from a different backbone/dataset."""


class NumericalError(DPCSearchError):
    """Non-finite values where finite ones are required. Exit code 4."""

    exit_code = 4


class CorrelationUndefinedError(NumericalError):
    """Rank correlation requested on inputs with zero rank variance."""


class ShapeError(DPCSearchError, ValueError):
    """Tensor rank/dimension mismatch; message names both shapes."""


class StateError(DPCSearchError):
    """Operation invoked in the wrong order (e.g. step before backward)."""
