"""Exception types shared across the package."""


class TileMilError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TileMilError, ValueError):
    pass


class ConfigError(TileMilError, ValueError):
    pass


class CoordinateRangeError(TileMilError, ValueError):
    pass


class LabelRangeError(TileMilError, ValueError):
    pass


class UsageError(TileMilError, RuntimeError):
    pass


class NonFiniteError(TileMilError, FloatingPointError):
    """A kernel produced NaN or Inf."""


class EmptyBagError(TileMilError, ValueError):
    pass


class DegenerateBatchError(TileMilError, ValueError):
    """A survival batch has no observed event."""


class UndefinedMetricError(TileMilError, ValueError):
    pass


class SpecError(TileMilError, ValueError):
    """Synthetic generator parameters cannot be satisfied."""


class TrainingDivergedError(TileMilError, RuntimeError):
    pass


class FormatError(TileMilError, ValueError):
    """Malformed binary or text input file."""
