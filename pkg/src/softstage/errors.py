"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data and
validation problems exit 2, runtime failures exit 3.
"""

from __future__ import annotations


class SoftstageError(Exception):
    """Base class for all toolkit errors."""


class DataError(SoftstageError):
    """Bad input data (exit code 2 territory)."""


class ParseError(DataError):
    """Unreadable token or malformed row in an input table."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(DataError):
    """Tables that should describe the same epochs disagree in shape."""


class ValidationError(DataError):
    """A value violates a documented precondition."""


class UndefinedAgreementError(ValidationError):
    """Soft-agreement is undefined (the scorer never committed to a stage)."""


class CalibrationError(SoftstageError):
    """The agreement calibration search cannot reach the requested target."""


class TrainingError(SoftstageError):
    """Training aborted (non-finite loss or gradient)."""


class InternalConsistencyError(SoftstageError):
    """An invariant the code relies on was broken; indicates a bug."""
