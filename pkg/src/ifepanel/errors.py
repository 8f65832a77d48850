"""Exception hierarchy.

``DataError`` subclasses signal bad input (CLI exit code 2); ``NumericalError``
subclasses signal solver or conditioning failures (CLI exit code 3).
"""


class IfeError(Exception):
    """Base class for all package errors."""


class DataError(IfeError):
    pass


class NumericalError(IfeError):
    pass


class DuplicateCell(DataError):
    pass


class RaggedRow(DataError):
    pass


class NonFinite(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class PatternInfeasible(DataError):
    pass


class RankTooLarge(DataError):
    pass


class EigenFailure(NumericalError):
    pass


class SpectrumFailure(NumericalError):
    pass


class Collinear(NumericalError):
    pass


class DegenerateProjector(NumericalError):
    pass


class ZeroStdErr(NumericalError):
    pass


class UnitRoot(NumericalError):
    pass


class NoConvergence(NumericalError):
    """Raised when an iterative routine hits its iteration cap.

    The best (or last) iterate is attached as ``partial`` and any diagnostic
    report as ``report`` so callers can still inspect or write it out.
    """

    def __init__(self, message, partial=None, report=None):
        super().__init__(message)
        self.partial = partial
        self.report = report


class StudyFailed(NumericalError):
    pass
