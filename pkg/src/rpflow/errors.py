"""Exception types shared across the package."""


class RPFlowError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(RPFlowError, ValueError):
    pass


class InvalidParam(RPFlowError, ValueError):
    pass


class NotPositiveDefinite(RPFlowError, ArithmeticError):
    """A kernel or covariance matrix could not be Cholesky-factorized.

    Usually means the matrix is ill-conditioned (near-duplicate positions or a
    lengthscale much larger than the point spacing). Retrying with a larger
    jitter is the normal remedy.
    """


class NonFiniteState(RPFlowError, ArithmeticError):
    pass


class DivergedError(RPFlowError, ArithmeticError):
    """Training loss became non-finite or exploded."""


class AllCandidatesFailed(RPFlowError, ArithmeticError):
    pass


class InsufficientSamples(RPFlowError, ValueError):
    pass


class SizeMismatch(RPFlowError, ValueError):
    pass


class ImageTooSmall(RPFlowError, ValueError):
    pass


class FormatError(RPFlowError, ValueError):
    """Malformed or truncated file contents."""
