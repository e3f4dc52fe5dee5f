"""Exception hierarchy shared by every module."""


class ALNError(Exception):
    """Base class for all package errors."""


class DimensionError(ALNError, ValueError):
    pass


class AlignmentError(DimensionError):
    """Two sequences that must be frame-aligned have different lengths."""


class EmptyInputError(ALNError, ValueError):
    pass


class LabelError(ALNError, ValueError):
    pass


class NumericFaultError(ALNError, ArithmeticError):
    """A NaN or infinite value appeared where finite numbers are required."""


class ValidationError(ALNError, ValueError):
    pass


class ParseError(ALNError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedVariantError(ALNError, ValueError):
    pass
