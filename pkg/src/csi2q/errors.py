"""Exception types shared across the pipeline."""


class Csi2qError(Exception):
    """Base class for all library errors."""


class InvalidInputError(Csi2qError, ValueError):
    """Raised when an argument violates a documented precondition."""


class NearZeroDenominatorError(Csi2qError, ArithmeticError):
    """A guarded division met a denominator below its threshold."""


class CalibrationError(Csi2qError):
    """OpenMax calibration could not be fitted or applied."""


class DegenerateFitError(CalibrationError):
    """Weibull fit on samples with no spread."""


class ContainerFormatError(Csi2qError):
    """Malformed or inconsistent dataset container."""
