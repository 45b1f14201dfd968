"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit 1,
data errors exit 2, numeric failures exit 3.
"""


class AccidentNetError(Exception):
    """Base class for all package errors."""


class ShapeError(AccidentNetError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(AccidentNetError, ValueError):
    """Invalid configuration value or file."""


class DataError(AccidentNetError, ValueError):
    """Malformed input data: manifests, frames, caches, weight files."""


class NumericError(AccidentNetError, ArithmeticError):
    """Non-finite values where finite ones are required."""
