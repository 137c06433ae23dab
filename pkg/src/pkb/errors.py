"""Exception types raised by the package."""


class PKBError(Exception):
    """Base class for all library errors."""


class DataFormatError(PKBError, ValueError):
    """Malformed or inconsistent input data."""


class ConvergenceError(PKBError, RuntimeError):
    """An iterative solver hit its sweep limit.

    ``last_iterate`` holds the coefficients at the point of failure and
    ``pathway`` the pathway index when raised from inside boosting.
    """

    def __init__(self, message, last_iterate=None, pathway=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.pathway = pathway


class StratificationError(PKBError, ValueError):
    """A cross-validation fold lacks one of the two classes."""
