"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a plain failure (1).
"""


class DistNetError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(DistNetError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(DistNetError):
    """A documented precondition was violated by the caller."""


class ConfigError(DistNetError):
    """Invalid or inconsistent configuration."""


class DataError(DistNetError):
    """Ingestion-time problem: malformed files, out-of-range stations, gaps."""


class NumericError(DistNetError):
    """A computation produced non-finite values."""
