"""Exception types raised across the package."""


class RegionScopeError(Exception):
    """Base class for all package errors."""


class ShapeError(RegionScopeError, ValueError):
    """Array or vector dimensions do not match what an operation expects."""


class NumericError(RegionScopeError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class ContractError(RegionScopeError, RuntimeError):
    """A caller broke a usage contract (stale cache, empty queue, ...)."""


class DegenerateError(RegionScopeError, ValueError):
    """Geometry or batch is degenerate (collinear anchors, no positives, ...)."""


class FormatError(RegionScopeError, ValueError):
    """A file does not follow the expected binary or text layout."""


class DataError(RegionScopeError, ValueError):
    """Dataset content is inconsistent or missing requested classes."""


class ConfigError(RegionScopeError, ValueError):
    """A configuration value is missing or invalid."""


class TruncatedFileError(RegionScopeError, OSError):
    """A binary file ended before its header said it would."""


class ArgumentError(RegionScopeError, ValueError):
    """An argument is outside the range an operation accepts."""
