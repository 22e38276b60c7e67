"""Exception types shared across the package."""


class PcspError(Exception):
    """Base class for all package errors."""


class DimensionError(PcspError, ValueError):
    """Array shapes are incompatible for the requested operation."""


class EmptyInputError(PcspError, ValueError):
    """An operation received an empty point set or tensor."""


class BoundsError(PcspError, ValueError):
    """An index or count lies outside its valid range."""


class ConfigError(PcspError, ValueError):
    """A configuration value violates a documented invariant."""


class ContractError(PcspError, ValueError):
    """A call violates an operation's precondition."""


class ParseError(PcspError, ValueError):
    """A file could not be decoded; message carries the offending location."""


class NumericError(PcspError, ArithmeticError):
    """A computation produced a non-finite value."""


class UsageError(PcspError, ValueError):
    """Bad command-line arguments or config-file keys."""
