"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
exits 2 and ``NumericError`` exits 3.
"""


class Hier2HierError(Exception):
    """Base class for all package errors."""


class ContractError(Hier2HierError):
    """A precondition of an operation was violated by the caller."""


class DimensionError(ContractError, ValueError):
    """Operand shapes are incompatible for a primitive."""


class NumericError(Hier2HierError, ArithmeticError):
    """A computation produced NaN or infinity."""


class DataError(Hier2HierError, ValueError):
    """Input data is malformed or inconsistent."""


class ConfigError(Hier2HierError, ValueError):
    """A configuration value is missing, unknown or out of range."""
