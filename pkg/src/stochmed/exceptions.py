"""Exception and warning types raised across the package."""


class StochMedError(Exception):
    """Base class for package errors."""


class DomainError(StochMedError, ValueError):
    """An argument lies outside the domain of an operation."""


class EmptyDataset(StochMedError, ValueError):
    pass


class RoleConflict(StochMedError, ValueError):
    pass


class MissingValue(StochMedError, ValueError):
    def __init__(self, row: int, col: str):
        self.row = row
        self.col = col
        super().__init__(f"missing or non-numeric value at row {row}, column {col!r}")


class NormalizerOverflow(StochMedError, ArithmeticError):
    """exp(delta * a) overflows the safe range on the exposure support."""


class QuadratureError(StochMedError, ArithmeticError):
    pass


class DegenerateVariance(StochMedError, ArithmeticError):
    pass


class UnsupportedForContinuous(StochMedError, ValueError):
    pass


class FoldFitError(StochMedError):
    """A nuisance fit failed inside a cross-fitting fold."""

    def __init__(self, fold: int, nuisance: str, cause: BaseException):
        self.fold = fold
        self.nuisance = nuisance
        self.cause = cause
        super().__init__(f"fold {fold}: fitting {nuisance} failed: {cause}")


# Warnings are flagged rather than raised so that a report can still be produced.


class StochMedWarning(UserWarning):
    pass


class WeightOverflow(StochMedWarning):
    pass


class ExtremeWeight(StochMedWarning):
    pass


class SingularDesign(StochMedWarning):
    pass


class NonConvergence(StochMedWarning):
    pass
