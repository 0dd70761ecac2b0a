"""Exception types raised by the estimation pipeline."""


class EstimationError(Exception):
    """Base class for all estimation failures in this package."""


class NonConvergence(EstimationError):
    """Newton iteration did not reach the residual tolerance.

    Carries the last iterate as ``solution`` so callers can inspect the
    residual and decide on a fallback.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class BoundaryMoment(EstimationError):
    """The moment target sits at or outside the attainable moment space.

    Raised when the coefficient iterate escapes the solver's box bound, or
    when a target component exceeds the range of the basis functions.
    The offending target is available as ``target``.
    """

    def __init__(self, message, target=None, solution=None):
        super().__init__(message)
        self.target = target
        self.solution = solution


class AllWeightsZero(EstimationError):
    """Every tree produced an empty leaf, so all similarity weights are zero."""


class NoCleanTrees(EstimationError):
    """Some delete-group has no tree subsample disjoint from it."""


class MissingPlan(EstimationError):
    """A standard error was requested from a fit built without a subsample plan."""


class ZeroDenominator(EstimationError):
    """The kernel denominator vanished: no sample mass near the query point."""
