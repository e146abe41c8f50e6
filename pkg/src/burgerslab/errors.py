"""Exception hierarchy shared by all lab modules."""


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ParameterError(LabError, ValueError):
    """Invalid argument: bad cutoff, mismatched bands, unknown option."""


class DivergenceError(LabError, FloatingPointError):
    """A time stepper produced a non-finite or exploding state."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PositivityError(LabError):
    """A field that must stay positive (stochastic heat equation) did not."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class RangeError(LabError, OverflowError):
    """Exponentiation overflow in the Cole-Hopf map."""


class StatisticsError(LabError):
    """Not enough samples (or degenerate data) for the requested statistic."""


class UndefinedExponentError(StatisticsError):
    """Structure-function regression on a constant series."""
