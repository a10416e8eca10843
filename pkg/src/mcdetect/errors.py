"""Exception hierarchy.

Errors describing bad inputs derive from :class:`ValueError` as well, so
callers that only care about "bad argument" can catch that.  Numerical
breakdowns (singular matrices and the like) derive from
:class:`NumericalError`.
"""


class McDetectError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(McDetectError):
    """A matrix or quantity was numerically unusable."""


class NotPositiveDefinite(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularSampleCovariance(NumericalError):
    pass


class SingularFisherBlock(NumericalError):
    pass


class DegenerateAmplitude(NumericalError):
    pass


class DegenerateVector(NumericalError, ValueError):
    pass


class OutOfVisibleRegion(McDetectError, ValueError):
    pass


class OrderExceedsAperture(McDetectError, ValueError):
    pass


class IdentifiabilityViolation(McDetectError, ValueError):
    pass


class EmptyGrid(McDetectError, ValueError):
    pass


class InvalidNoise(McDetectError, ValueError):
    pass


class InsufficientSecondaryData(McDetectError, ValueError):
    pass


class IncompleteSpecification(McDetectError, ValueError):
    pass


class CalibrationUnderpowered(McDetectError, ValueError):
    pass


class NoValidTrials(NumericalError):
    pass


class ConfigError(McDetectError, ValueError):
    """Malformed or inconsistent experiment configuration."""
