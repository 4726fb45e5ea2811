"""Exception types shared across the package."""


class AuglabError(Exception):
    """Base class for all package errors."""


class DimensionError(AuglabError, ValueError):
    """An input has an invalid or mismatched dimension."""


class CapabilityError(AuglabError, RuntimeError):
    """The requested operation is not available for this object.

    Raised e.g. when exact enumeration is requested above the enumeration
    cutoff, or a matrix representation is asked of a non-linear action.
    """


class NumericalError(AuglabError, RuntimeError):
    """A computation failed numerically (divergence, singular matrix)."""
