"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`DRError`,
so callers (the CLI, the simulation harness) can catch one type and map
subclasses to exit codes or replicate exclusions.
"""


class DRError(Exception):
    """Base class for all package errors."""


class InputError(DRError, ValueError):
    """Invalid numeric input (non-finite values, bad levels, bad shapes)."""


class SchemaError(DRError, KeyError):
    """A referenced column is missing or a dimension does not match."""

    def __str__(self):
        # KeyError quotes its argument; plain message reads better
        return str(self.args[0]) if self.args else ""


class DegenerateKnotsError(InputError):
    """Spline knots cannot be placed (too few distinct values)."""


class BoundsError(InputError):
    """Outcome bounds are invalid or violated."""


class ContractError(DRError):
    """A required intermediate quantity is missing."""


class NumericalError(DRError, ArithmeticError):
    """Base for failures of the numerical routines."""


class ConvergenceError(NumericalError):
    """An iterative fit did not converge."""


class SingularDesignError(NumericalError):
    """Design matrix is rank deficient on the weighted support."""


class PositivityError(NumericalError):
    """Estimated propensity scores are numerically 0 or 1."""


class EmptyArmError(NumericalError):
    """A targeting model has no observations with positive weight."""


class SingularBreadError(NumericalError):
    """Bread matrix is singular or too badly conditioned to invert."""


class IngestionError(DRError):
    """A data file could not be read or failed validation."""
