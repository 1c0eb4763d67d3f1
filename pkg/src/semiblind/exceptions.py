"""Exception types raised across the package.

All errors derive from :class:`SemiBlindError` and, where it makes sense,
from the matching builtin so that ``except ValueError`` keeps working.
"""

from sklearn.exceptions import ConvergenceWarning

__all__ = [
    "SemiBlindError",
    "InvalidSpecError",
    "ShapeError",
    "SingularModelError",
    "NumericError",
    "BudgetExceededError",
    "NonIdentifiableError",
    "InconsistentDataError",
    "UndefinedMetricError",
    "ConvergenceWarning",
]


class SemiBlindError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(SemiBlindError, ValueError):
    """A specification or configuration value is out of its allowed range."""


class ShapeError(SemiBlindError, ValueError):
    """Array dimensions do not agree."""


class NumericError(SemiBlindError, ArithmeticError):
    """A numerical routine produced a non-finite or indefinite quantity."""


class SingularModelError(NumericError):
    """``I - A`` (or ``I - A0``) is singular or too badly conditioned.

    Attributes
    ----------
    cond : float
        Estimated 2-norm condition number of the offending matrix.
    """

    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (condition number {cond:.3e})")
        self.cond = cond


class BudgetExceededError(SemiBlindError, RuntimeError):
    """An exhaustive combinatorial search would exceed its configured budget."""

    def __init__(self, message, budget=None):
        super().__init__(message)
        self.budget = budget


class NonIdentifiableError(SemiBlindError):
    """More than one sparse row explains the masked observations.

    Attributes
    ----------
    row : int
        Zero-based row index of the adjacency matrix.
    witnesses : tuple of ndarray
        Two distinct candidate rows, both consistent with the data.
    """

    def __init__(self, row, witnesses):
        super().__init__(f"row {row} is not identifiable: at least two consistent sparse rows")
        self.row = row
        self.witnesses = tuple(witnesses)


class InconsistentDataError(SemiBlindError, ValueError):
    """No sparse row reproduces the masked observations."""

    def __init__(self, row):
        super().__init__(f"row {row}: no consistent sparse row found")
        self.row = row


class UndefinedMetricError(SemiBlindError, ValueError):
    """A metric denominator vanished."""
