"""Exception types raised by loopflow."""


class LoopflowError(Exception):
    """Base class for all loopflow errors."""


class DimensionError(LoopflowError, ValueError):
    pass


class GridError(LoopflowError, ValueError):
    pass


class NoConvergence(LoopflowError, RuntimeError):
    pass


class SingularJacobian(LoopflowError, RuntimeError):
    pass


class DegenerateCriticalPoint(LoopflowError, RuntimeError):
    """Jacobi operator has an eigenvalue too close to zero."""


class NegativeTimeOnPlus(LoopflowError, ValueError):
    pass


class StepRejected(LoopflowError, RuntimeError):
    pass


class StiffnessAbort(LoopflowError, RuntimeError):
    pass


class ContractionStall(LoopflowError, RuntimeError):
    """Fixed-point iteration stopped contracting."""

    def __init__(self, msg, ratios=None):
        super().__init__(msg)
        self.ratios = list(ratios or [])


class BallViolation(LoopflowError, ValueError):
    pass


class BisectionFail(LoopflowError, RuntimeError):
    pass


class FiberMiss(LoopflowError, RuntimeError):
    pass
