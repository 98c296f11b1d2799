"""
Error types for Interpretable Bandit Bench
One hierarchy so the CLI can map failures to exit codes
"""

from typing import Optional


class BenchError(Exception):
    """Base class for all bench errors"""


class StructuralError(BenchError, ValueError):
    """Shapes or dimensions do not line up"""


class InputError(BenchError, ValueError):
    """A value is outside the accepted domain"""


class DatasetError(InputError):
    """A dataset file could not be parsed"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(BenchError, ValueError):
    """Experiment or policy configuration is invalid"""


class RankDeficiencyError(BenchError, ArithmeticError):
    """A least-squares system has no unique solution"""


class BenchIOError(BenchError, OSError):
    """Reading or writing experiment files failed"""


class InvariantViolation(BenchError, AssertionError):
    """A property that must hold during simulation was violated"""
