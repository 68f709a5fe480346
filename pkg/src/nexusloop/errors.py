"""Exception hierarchy shared by all modules."""


class NexusLoopError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(NexusLoopError, ValueError):
    """Malformed or out-of-range configuration; ``key`` names the offender."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericalError(NexusLoopError):
    """Any failure of a numerical procedure."""


class UnphysicalStateError(NumericalError, ValueError):
    """Effective cavity decay is not positive."""


class UnstableSystemError(NumericalError):
    """Drift matrix is not Hurwitz stable where stability is required."""


class SingularSystemError(NumericalError):
    """Linear system is singular (marginal stability)."""


class NumericalInconsistencyError(NumericalError):
    """A computed quantity violates a consistency bound beyond tolerance."""


class ConvergenceError(NumericalError):
    def __init__(self, message, iterations=0):
        super().__init__(message)
        self.iterations = iterations


class StartNotBistableError(NumericalError):
    """Loop start point does not carry two admissible branches."""


class NoStableRootError(NumericalError):
    """Continuation reached a drive point without an admissible root."""


class StepTooLargeError(NumericalError, ValueError):
    pass


class DivergenceError(NumericalError):
    pass


class NoCuspError(NumericalError):
    pass


class MultipleTonguesError(NumericalError):
    pass
