"""Exception types shared across the package.

The CLI maps these onto process exit codes; library callers can catch them
individually. Plain ``ValueError`` is still used for garden-variety argument
validation (bad shapes, out-of-range probabilities, and so on).
"""


class NetOutlierError(Exception):
    """Base class for errors raised by this package."""


class ParseError(NetOutlierError):
    """A configuration or data file could not be parsed."""


class DimensionMismatchError(NetOutlierError):
    """Inputs whose shapes must agree do not, or rows contain missing values."""


class DisconnectedGraphError(NetOutlierError):
    """The graph has more than one connected component."""


class DegenerateEstimateError(NetOutlierError):
    """An estimator reached a degenerate state (singular or non positive
    definite matrices, no usable deterministic start, empty subsets)."""


class NotPositiveDefiniteError(DegenerateEstimateError):
    """A matrix required to be symmetric positive definite is not."""


class RankDeficiencyError(DegenerateEstimateError):
    """The covariate design is rank deficient beyond removable constants."""


class DegenerateColumnError(DegenerateEstimateError):
    """A data column has zero scale or zero variance after transformation."""
