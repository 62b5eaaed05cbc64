"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: DataError -> 1, ConfigError -> 2,
NumericError -> 3. Everything else is an ordinary ValueError/RuntimeError and
indicates a programming mistake rather than a runtime condition.
"""


class DataError(ValueError):
    """Missing or malformed input data (files, manifests, images)."""


class ConfigError(ValueError):
    """Invalid configuration value or unparseable config file."""


class NumericError(ArithmeticError):
    """A numeric computation produced NaN/Inf or was asked to."""


class StateError(RuntimeError):
    """An object was used in the wrong lifecycle state (e.g. missing grads)."""


class DimensionError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DegenerateSizeError(ValueError):
    """A point set collapses to a single coordinate along a measurement axis."""
