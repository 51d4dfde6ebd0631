"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or lost required structure."""


class EstimationError(ValueError):
    """Not enough (or inconsistent) samples for a statistical estimate."""


class DataFormatError(ValueError):
    """A binary dataset or checkpoint file is malformed."""


class ConfigError(ValueError):
    """A run configuration is invalid or inconsistent."""
