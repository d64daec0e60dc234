"""Exception hierarchy.

Validation problems subclass :class:`ValueError`; numerical failures subclass
:class:`NumericalError` so the CLI can map them to distinct exit codes.
"""


class InvalidParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """Base class for failures of the numerical machinery."""


class AccuracyNotReachedError(NumericalError):
    """Integration stopped at its evaluation budget before the target error.

    ``estimate`` carries the best :class:`~supnoninf.mvt.ProbEstimate` found.
    """

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class ConvergenceError(NumericalError):
    """Bisection did not meet its stopping rule within ``max_iters``."""

    def __init__(self, message, bracket):
        super().__init__(message)
        self.bracket = bracket


class UnreachableTargetError(NumericalError):
    """A sample-size search could not reach the requested power."""


class BracketError(NumericalError):
    """A root finder could not bracket its target; ``trace`` holds evaluations."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
