"""
Exception hierarchy for the hybrid classifier
Each class maps to one CLI exit code (see EXIT_CODES)
"""
from typing import Optional


class ClassifierError(Exception):
    """Base class for every error raised by this package"""

    exit_code = 1


class ConfigurationError(ClassifierError):
    """Pipeline wiring is inconsistent (missing module, subset/order mismatch)"""

    exit_code = 1


class DataError(ClassifierError):
    """Input data could not be used"""

    exit_code = 2


class InputError(DataError, ValueError):
    pass


class DimensionError(DataError, ValueError):
    pass


class TokenRangeError(DataError, IndexError):
    pass


class ReportParseError(DataError):
    """Malformed emulation report; `offset` is the byte offset of the fault"""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message)
        self.offset = offset


class SchemaError(DataError):
    pass


class ManifestError(DataError):
    """Malformed manifest; `line` is the 1-based line number when known"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class CompatibilityError(DataError):
    """Checkpoint cannot be used with the current runtime"""

    def __init__(self, message: str, expected: Optional[str] = None, found: Optional[str] = None):
        super().__init__(message)
        self.expected = expected
        self.found = found


class GenerationError(DataError):
    pass


class UndefinedMetricError(DataError, ValueError):
    pass


class StateError(ClassifierError, RuntimeError):
    exit_code = 3


class NumericError(ClassifierError, ArithmeticError):
    exit_code = 3


EXIT_CODES = {
    'success': 0,
    'usage': 1,
    'data': 2,
    'numeric': 3,
}
