"""Exception types shared by every module.

Each error carries a short ``tag`` (printed by the CLI as a machine-parsable
token) and the process ``exit_code`` it maps to.
"""

from __future__ import annotations


class QRFError(Exception):
    """Base class for all package errors."""

    exit_code = 4

    @property
    def tag(self) -> str:
        return type(self).__name__


class IoError(QRFError, OSError):
    exit_code = 2


class DataValidationError(QRFError, ValueError):
    exit_code = 3


class NumericError(QRFError, ArithmeticError):
    exit_code = 4


# --- data validation -------------------------------------------------------

class MalformedCsv(DataValidationError):
    pass


class NonNumericCell(DataValidationError):
    pass


class DuplicateYear(DataValidationError):
    pass


class TooFewRows(DataValidationError):
    pass


class UnimputableColumn(DataValidationError):
    pass


class InsufficientNeighbors(DataValidationError):
    pass


class DegenerateFeature(DataValidationError):
    def __init__(self, column: str):
        super().__init__(f"feature column {column!r} is constant")
        self.column = column


class EmptyPartition(DataValidationError):
    pass


class SchemaMismatch(DataValidationError):
    pass


class MissingValue(DataValidationError):
    pass


class InvalidParameter(DataValidationError):
    pass


class LengthMismatch(DataValidationError):
    pass


class EmptyInput(DataValidationError):
    pass


class NoOobSamples(DataValidationError):
    pass


class UnsupportedFormat(DataValidationError):
    pass


# --- numeric ---------------------------------------------------------------

class DegenerateSample(NumericError):
    pass


class ZeroDenominator(NumericError):
    pass


class ZeroVariance(NumericError):
    pass
