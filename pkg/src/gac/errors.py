"""Exception types raised across the package."""


class GACError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(GACError, ValueError):
    pass


class DimensionMismatch(GACError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class EmptyBatch(GACError, ValueError):
    pass


class EmptyBuffer(GACError, ValueError):
    pass


class SolverDiverged(GACError, RuntimeError):
    pass


class NoConvergence(GACError, RuntimeError):
    pass


class NonFiniteState(GACError, FloatingPointError):
    pass


class GridTooCoarse(GACError, ValueError):
    pass


class InfeasibleBounds(GACError, ValueError):
    pass


class ConfigError(GACError, ValueError):
    pass
