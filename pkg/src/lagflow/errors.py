"""Exception hierarchy shared by all lagflow modules."""


class LagflowError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(LagflowError, ValueError):
    """Arguments violate a documented precondition."""


class ResolutionError(LagflowError, ValueError):
    """A grid is too coarse for the requested operation."""


class OutOfRangeError(LagflowError, ValueError):
    """A query point lies outside the sampled coverage."""


class StabilityError(LagflowError, ValueError):
    """Time step exceeds the explicit-scheme stability bound."""


class InfeasibleConstraintsError(LagflowError, ValueError):
    """A rejection sampler could not find admissible points."""


class SigmaSelectionError(LagflowError, RuntimeError):
    """No mollification radius satisfied the requested bounds.

    ``diagnostics`` holds the search trace and the worst node of the
    last candidate that was tried.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NumericalAbort(LagflowError, RuntimeError):
    """Integration produced non-finite values."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
