"""Exception types shared across the package."""


class CosodError(Exception):
    """Base class for package errors."""


class ContractError(CosodError, ValueError):
    """An argument violates a documented shape or range precondition."""


class FormatError(CosodError):
    """A binary file (feature cache, checkpoint) is corrupt or has the wrong magic."""


class ConfigurationError(CosodError):
    """Invalid configuration, missing weights, or an empty dataset."""


class NumericError(CosodError, FloatingPointError):
    """Non-finite values encountered where finite values are required."""
