"""Exception types raised across the package."""


class LpvError(Exception):
    """Base class for all package errors."""


class SingularMatrix(LpvError):
    pass


class NoConvergence(LpvError):
    pass


class ShapeMismatch(LpvError, ValueError):
    pass


class NormBoundViolated(LpvError):
    pass


class NonFiniteState(LpvError):
    """A simulated state left the finite range.

    ``step`` is the time index at which the blow-up was detected and
    ``prefix`` holds the outputs computed before it (may be None).
    """

    def __init__(self, step, message=None, prefix=None):
        self.step = step
        self.prefix = prefix
        super().__init__(message or f"state diverged at t={step}")


class DegenerateReference(LpvError, ValueError):
    pass


class FormatVersionMismatch(LpvError):
    pass


class CorruptFile(LpvError):
    pass
