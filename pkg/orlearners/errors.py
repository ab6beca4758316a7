"""
Exceptions raised across the package.

Validation problems derive from ValueError (CLI exit code 1),
runtime failures such as diverging training derive from RuntimeError
(CLI exit code 2).
"""


class OrlError(Exception):
    """Base class for all package errors."""


class ValidationFailure(OrlError, ValueError):
    """Input, data or configuration did not pass validation."""


class ConfigurationError(ValidationFailure):
    pass


class DataValidationError(ValidationFailure):
    pass


class MissingColumn(DataValidationError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"Missing required column: '{column}'")


class NonBinaryTreatment(DataValidationError):
    def __init__(self, row: int, value: object):
        self.row = row
        super().__init__(f"Treatment must be 0 or 1, got {value!r} in row {row}")


class NonFiniteValue(DataValidationError):
    def __init__(self, row: int, column: str):
        self.row = row
        self.column = column
        super().__init__(f"Non-finite value in row {row}, column '{column}'")


class LengthMismatch(DataValidationError):
    pass


class ShapeMismatch(ValidationFailure):
    pass


class DimensionMismatch(ValidationFailure):
    pass


class DimensionTooSmall(ValidationFailure):
    pass


class EmptySample(ValidationFailure):
    pass


class AllZeroWeights(ValidationFailure):
    pass


class SingleArmData(ValidationFailure):
    pass


class DegenerateSample(ValidationFailure):
    pass


class EmptyGrid(ValidationFailure):
    pass


class MismatchedQuantity(ValidationFailure):
    pass


class OracleUnavailable(ValidationFailure):
    pass


class NonFiniteLoss(OrlError, RuntimeError):
    """Training diverged."""

    def __init__(self, where: str, value: float):
        self.where = where
        self.value = value
        super().__init__(f"Non-finite loss ({value}) in {where}")


class NumericalUnderflow(OrlError, RuntimeError):
    pass
