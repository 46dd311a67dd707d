"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3, numeric failures exit 4.
"""


class SwbalError(Exception):
    """Base class for package errors."""


class DataError(SwbalError):
    """Malformed input data (wrong shapes, non-finite values, bad levels)."""


class BalanceInfeasibleError(SwbalError):
    """The balance constraints admit no positive-weight solution.

    Detected when the dual objective increases without bound along an
    ascent direction (multiplier norm diverges while the gradient stays
    away from zero).
    """


class NotConvergedError(SwbalError):
    """An iterative fit hit its iteration cap before meeting tolerance."""


class RankDeficientError(SwbalError):
    """A weighted design Gram matrix is numerically singular."""
