"""
Exception hierarchy shared by the library and the CLI.
Every error carries the process exit code the CLI should use.
"""
from typing import Optional


class RecourseError(Exception):
    """Base class for all errors raised by this package"""
    exit_code = 1


class ConfigError(RecourseError, ValueError):
    """Bad dataset config, bad CLI combination, missing file"""
    exit_code = 2


class InvalidActionSetError(ConfigError):
    """Action set that does not contain the zero action"""


class DataError(RecourseError, ValueError):
    """Problems with the tabular data itself"""
    exit_code = 3


class ParseError(DataError):
    """A cell that could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class BoundsError(DataError):
    """Requested more rows than a split has"""


class ShapeError(RecourseError, ValueError):
    exit_code = 4


class NumericError(RecourseError, ArithmeticError):
    """Non-finite values where finite ones are required"""
    exit_code = 4


class SolverError(NumericError):
    """LP solver gave up (iteration cap)"""


class UnsupportedProjectionError(RecourseError, ValueError):
    exit_code = 4
