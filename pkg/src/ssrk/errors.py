"""Exception types shared across the package."""


class SsrkError(Exception):
    """Base class for all package errors."""


class StructureError(SsrkError, ValueError):
    """Malformed object: inconsistent dimensions, bad flags, non-triangular A."""


class DomainError(SsrkError, ValueError):
    """Argument outside its admissible range (the message names the bound)."""


class ConvergenceError(SsrkError, RuntimeError):
    """A fixed-point stage solve diverged or hit the iteration limit."""

    def __init__(self, message, stage=None, residual=None, step=None):
        super().__init__(message)
        self.stage = stage
        self.residual = residual
        self.step = step


class SingularStageError(SsrkError, RuntimeError):
    """The linear stage system is singular for the given step size."""

    def __init__(self, message, h=None):
        super().__init__(message)
        self.h = h


class ExperimentError(SsrkError, RuntimeError):
    """A Monte Carlo experiment could not produce a trustworthy result."""
