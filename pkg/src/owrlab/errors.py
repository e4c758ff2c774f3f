"""Exception types shared across owrlab."""


class OwrLabError(Exception):
    """Base class for all owrlab errors."""


class ConfigurationError(OwrLabError, ValueError):
    """Invalid parameters or infeasible settings."""


class DimensionError(OwrLabError, ValueError):
    """Tensor extents do not match what an operation expects."""


class ContractError(OwrLabError, RuntimeError):
    """An operation was called in a state that violates its preconditions."""


class NumericError(OwrLabError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class ParseError(OwrLabError, ValueError):
    """A file could not be decoded."""
