"""Exception types raised across the package."""


class PertGibbsError(Exception):
    """Base class for all package errors."""


class DimensionError(PertGibbsError, ValueError):
    """Two objects live on different state spaces."""


class ReferenceMeasureError(PertGibbsError, ValueError):
    """A reference measure has zero mass where a density is needed."""


class DomainError(PertGibbsError, ValueError):
    """A parameter lies outside the region where a formula is meaningful."""


class ConvergenceError(PertGibbsError, RuntimeError):
    """An iterative solve failed to produce a unique fixed point."""


class BudgetExceededError(PertGibbsError, RuntimeError):
    """An enumeration or iteration would exceed its configured cap.

    Parameters
    ----------
    message : str
        Human readable description.
    cap : int
        The cap that would have been exceeded.
    required : int, optional
        The size that was requested.
    """

    def __init__(self, message, cap, required=None):
        super().__init__(message)
        self.cap = cap
        self.required = required


class ConditioningError(PertGibbsError, ValueError):
    """Conditioning on an event of probability zero."""


class StructureError(PertGibbsError, ValueError):
    """A factorization structure is malformed or does not hold for a measure."""


class SubsampleError(PertGibbsError, ValueError):
    """A subsample vector is inconsistent with the observation set."""
