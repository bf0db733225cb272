"""Exception types shared across the package."""


class HPCNError(Exception):
    pass


class ShapeError(HPCNError, ValueError):
    pass


class ConfigError(HPCNError, ValueError):
    pass


class UsageError(HPCNError, ValueError):
    pass


class ContractError(HPCNError, ValueError):
    """An input violated a value-level contract (e.g. non-binary spikes)."""


class SchemaError(HPCNError, ValueError):
    """A CSV file is missing a column required by its schema."""


class NumericError(HPCNError, ArithmeticError):
    """NaN/Inf produced, or training diverged."""
