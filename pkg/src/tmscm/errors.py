"""Exception types shared across the package."""


class TmscmError(Exception):
    """Base class for all package errors."""


class CycleDetected(TmscmError):
    """The parent relation contains a directed cycle."""


class UnknownNode(TmscmError):
    """A node id does not exist in the graph."""


class ShapeMismatch(TmscmError):
    """An array does not have the expected shape."""


class NoSampler(TmscmError):
    """The exogenous distribution cannot be sampled."""


class NotMonotone(TmscmError):
    """A triangular map has a zero signature entry where strict monotonicity is required."""


class NoBracket(TmscmError):
    """Monotone root finding could not bracket the solution within the expansion limit."""


class DimMismatch(TmscmError):
    """Two maps or arrays have incompatible dimensions."""


class BadRange(TmscmError):
    """An index range is out of bounds or empty."""


class DegenerateDistribution(TmscmError):
    """A quantile function has a flat segment or zero spread."""


class NotInvertible(TmscmError):
    """A mechanism is not invertible in its noise argument."""


class OrderMismatch(TmscmError):
    """A proposed order is not a linear extension of the parent partial order."""


class NotScalar(TmscmError):
    """Gradient requested for a non-scalar output."""


class ConfigError(TmscmError):
    """An invalid configuration value."""


class InvalidConfig(ConfigError):
    """A run configuration failed validation."""


class NonFinite(TmscmError):
    """A numeric computation produced NaN or infinity."""


class NonFiniteState(NonFinite):
    """ODE integration produced a non-finite state."""


class Degenerate(TmscmError):
    """A sample set is empty or otherwise unusable."""
