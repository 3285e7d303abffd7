"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything numeric/contract-shaped -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed or missing input data (files, manifests, schemas)."""


class ShapeError(ValueError):
    """Dimension mismatch between arrays that must be conformable."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class NumericError(ArithmeticError):
    """NaN/Inf encountered where finite values are required."""
