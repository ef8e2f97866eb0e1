"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ObsGenError(Exception):
    """Base class for all package errors."""


class ConfigError(ObsGenError):
    """Invalid configuration: bad values, missing paths, inconsistent dims."""


class DataError(ObsGenError):
    """Malformed input data: unknown categories, bad record files."""


class VocabularyError(DataError):
    """A token or node id falls outside the relevant embedding table."""


class NumericError(ObsGenError):
    """Numeric failure: non-finite values, illegal masks, bad shapes at runtime."""


class DimensionError(NumericError):
    """Operand shapes are incompatible for the requested operation."""
