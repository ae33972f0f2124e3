"""Exception types shared across the package."""


class LnlError(Exception):
    """Base class for all package errors."""


class DimensionError(LnlError):
    """Operands have incompatible shapes."""


class ConfigurationError(LnlError):
    """A config value is out of range or internally inconsistent."""


class ContractError(LnlError):
    """An operation was called outside its contract (e.g. backward on a non-scalar)."""


class NumericalError(LnlError):
    """A forward pass produced NaN/Inf, or a loss went non-finite."""


class DataError(LnlError):
    """Dataset files are missing, malformed, or inconsistent with the config."""
