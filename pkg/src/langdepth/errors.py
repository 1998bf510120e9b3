"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called in violation of its stated preconditions."""


class NumericError(ArithmeticError):
    """An evaluation produced NaN or infinity."""


class ConfigError(ValueError):
    """A configuration value is out of its allowed range or inconsistent."""


class FormatError(ValueError):
    """Base class for problems with serialized files."""


class HeaderFormatError(FormatError):
    """Bad or unsupported magic/version, or a header too short to parse."""


class TruncatedRecordError(FormatError):
    """A record body ended early."""


class CountMismatchError(FormatError):
    """The number of records on disk disagrees with the header count."""
