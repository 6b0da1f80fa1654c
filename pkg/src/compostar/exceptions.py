"""Exception hierarchy.

Validation problems derive from :class:`ValueError`, numerical breakdowns
from :class:`ArithmeticError`, so callers can catch broadly or narrowly.
"""


class CompostarError(Exception):
    """Base class for all package errors."""


class ValidationError(CompostarError, ValueError):
    """Invalid input: bad shapes, values or file contents."""


class NumericalError(CompostarError, ArithmeticError):
    """A computation failed or left its domain of validity."""


# simplex
class NonPositivePart(ValidationError):
    pass


class DimensionTooSmall(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class InvalidPartition(ValidationError):
    pass


# weights
class SideTooSmall(ValidationError):
    pass


class SelfLoop(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class NonPositiveRadius(ValidationError):
    pass


# model / estimation
class ShapeMismatch(ValidationError):
    pass


class Unstable(NumericalError):
    """The spatial filter is not invertible (or too close to singular)."""


class SolveFailed(NumericalError):
    pass


class NonFiniteLogDet(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


# io
class PanelFormatError(ValidationError):
    """Malformed panel/regressor/weights file.

    ``records`` holds one human-readable line per offending record.
    """

    def __init__(self, message, records=()):
        super().__init__(message)
        self.records = list(records)


class MissingCell(PanelFormatError):
    pass


class ZeroPart(PanelFormatError):
    pass


class RaggedTimes(PanelFormatError):
    pass


class AlignmentError(PanelFormatError):
    pass
