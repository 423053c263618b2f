"""Exception types shared across the package."""


class SpsError(Exception):
    """Base class for all errors raised by this package."""


class BadConfig(SpsError):
    """Invalid configuration or malformed input data."""


class SingularDesign(SpsError):
    """The averaged regressor outer product is numerically singular."""


class DegenerateSample(SpsError):
    """Too few samples for the requested estimate (n <= d)."""


class NormUnsupported(SpsError):
    """The operation is only defined for the Euclidean norm."""


class NumericalFailure(SpsError):
    """An iterative routine exceeded its iteration cap or sanity check."""


class InfiniteRegion(SpsError):
    """A finite summary was requested for an unbounded region."""


class CenterExcluded(SpsError):
    """Ray tracing requires the start point to be a member of the region."""
