"""Exception types raised across the package."""


class StochBTError(Exception):
    """Base class for all package errors."""


class DimensionError(StochBTError, ValueError):
    """Matrix shapes are inconsistent."""


class QuadratureError(StochBTError):
    """A quadrature did not reach its requested tolerance."""


class SolverError(StochBTError):
    """A linear or matrix-equation solve failed.

    Attributes
    ----------
    history : list of float
        Residual history of an iterative solve (empty for direct solves).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class SimulationError(StochBTError):
    """A stochastic simulation produced non-finite values or could not step."""
