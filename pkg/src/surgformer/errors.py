"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ConfigError(ValueError):
    """Invalid configuration or dimension set."""


class ShapeError(ValueError):
    """Operand shapes do not fit the operation."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


class DataError(ValueError):
    """Malformed or missing input data."""


class NumericError(FloatingPointError):
    """Training produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
