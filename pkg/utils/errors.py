"""Exception hierarchy shared by the solver modules."""


class UltrafastError(Exception):
    """Base class for every error raised by the utils package"""


class InvalidResolutionError(UltrafastError, ValueError):
    """Grid or quantile resolution below the supported minimum"""


class ShapeError(UltrafastError, ValueError):
    """Per-cell array length does not match the grid"""


class PositivityError(UltrafastError, ValueError):
    """A sample that must be strictly positive is not"""


class UnsupportedExponentError(UltrafastError, ValueError):
    """Exponent outside the range where a functional is defined"""


class DegenerateCDFError(UltrafastError, ValueError):
    """Cumulative distribution is not strictly increasing"""


class MassMismatchError(UltrafastError, ValueError):
    """Two densities compared by transport carry different mass"""


class AtomLimitError(UltrafastError, ValueError):
    """Too many atoms for the permutation oracle"""


class StepFailureError(UltrafastError):
    """Nonlinear solve did not converge within its iteration budget"""

    def __init__(self, message: str, residual: float = float('nan'), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DegenerateStepError(UltrafastError):
    """Quantile cells collapsed onto the monotonicity floor"""


class SubcriticalExponentError(UltrafastError, ValueError):
    """Moser starting exponent at or below the admissible threshold"""


class TimeGridMismatchError(UltrafastError, ValueError):
    """Two trajectories sampled on different time grids"""


class ConfigError(UltrafastError, ValueError):
    """Experiment configuration failed to parse or validate"""
