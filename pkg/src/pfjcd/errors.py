"""Exception types raised across the package."""


class PfjcdError(Exception):
    """Base class for all package errors."""


class ConfigError(PfjcdError, ValueError):
    """Invalid scenario or sweep configuration."""


class DimensionMismatch(PfjcdError, ValueError):
    pass


class ResampleExhausted(PfjcdError, RuntimeError):
    """A user's strongest path could not clear the SNR floor within the cap."""


class NumericalDivergence(PfjcdError, FloatingPointError):
    """A message-passing variance left the admissible range.

    ``iteration`` is the 1-based iteration at which it happened, when known.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class DegenerateEM(PfjcdError, ArithmeticError):
    pass


class SingularPilotGram(PfjcdError, ArithmeticError):
    pass


class InvalidWindow(PfjcdError, ValueError):
    pass


class EmptyPlan(PfjcdError, RuntimeError):
    pass


class ZeroReference(PfjcdError, ZeroDivisionError):
    pass


class NotConverged(PfjcdError, RuntimeError):
    pass


class NonPhysical(PfjcdError, ValueError):
    pass


class QuadratureUnstable(PfjcdError, ArithmeticError):
    pass


class GroupSolveError(PfjcdError, RuntimeError):
    """Stage-2 solver failure, tagged with the decoupling group index."""

    def __init__(self, group, cause):
        super().__init__(f"group {group}: {cause}")
        self.group = group
        self.cause = cause
