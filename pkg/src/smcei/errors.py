"""Exception types shared across the package."""


class SmcEiError(Exception):
    """Base class for all package-specific errors."""


class FactorizationFailure(SmcEiError):
    """Correlation matrix is numerically singular even at the jitter cap.

    Signals a degenerate design: near-duplicate evaluation points or range
    parameters so extreme that all correlations collapse to one.
    """


class DegenerateData(SmcEiError):
    """Observed values carry no scale information (residual quadratic form is zero)."""


class DofTooLow(SmcEiError):
    """Expected improvement is undefined for a Student-t with dof <= 1."""


class AllWeightsZero(SmcEiError):
    """Every particle weight underflowed to zero; prior and data are incompatible."""


class DegenerateCloud(SmcEiError):
    """Particle cloud covariance is singular, so no proposal can be built."""


class EmptySample(SmcEiError):
    """A weighted sample with zero total weight cannot define a histogram."""


class OutOfDomain(SmcEiError):
    """A point lies outside the optimization domain."""


class ExhaustedCandidates(SmcEiError):
    """Every point of the fixed candidate design has already been evaluated."""
