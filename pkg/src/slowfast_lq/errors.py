"""Exception hierarchy shared by all solvers."""


class SlowFastError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(SlowFastError, ValueError):
    pass


class SingularOperator(SlowFastError):
    """The vectorized Lyapunov operator is (numerically) rank deficient."""


class EpsilonOutOfRange(SlowFastError, ValueError):
    pass


class SingularA22(SlowFastError):
    pass


class SingularClosedLoop(SlowFastError):
    pass


class DeltaNotPositive(SlowFastError):
    """R + D* P D lost positive definiteness.

    ``time`` carries the (original, forward) time of the first violation
    when known.
    """

    def __init__(self, message, time=None, min_eigenvalue=None):
        super().__init__(message)
        self.time = time
        self.min_eigenvalue = min_eigenvalue


class StepSizeUnderflow(SlowFastError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NoStabilizingSolution(SlowFastError):
    pass


class MaxItersExceeded(SlowFastError):
    def __init__(self, message, last_gap=None):
        super().__init__(message)
        self.last_gap = last_gap


class Divergence(SlowFastError):
    pass


class ZeroDisplacement(SlowFastError, ValueError):
    pass


class NonDecaying(SlowFastError):
    pass


class NoiseFloor(SlowFastError):
    pass


class StepTooLarge(SlowFastError, ValueError):
    pass


class AllPathsExploded(SlowFastError):
    pass


class EpsilonSolveError(SlowFastError):
    """Wraps a solver failure with the epsilon that triggered it."""

    def __init__(self, epsilon, cause):
        super().__init__(f"epsilon={epsilon!r}: {type(cause).__name__}: {cause}")
        self.epsilon = epsilon
        self.cause = cause
