"""
errors.py
---------
Exceptions raised by the simulator and the analysis pipeline. The ``exit_code``
attribute is what the command-line front end returns for each class.
"""


class AfcDlczError(Exception):
    exit_code = 1


class UsageError(AfcDlczError):
    exit_code = 2


class DomainError(AfcDlczError, ValueError):
    """An operation was called outside its mathematical domain."""

    exit_code = 2


class ConfigurationError(AfcDlczError):
    """A configuration invariant is violated.

    Args:
        field (str | None): Name of the offending field, when there is one.
        message (str): Human readable reason.
    """

    exit_code = 3

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DataError(AfcDlczError):
    """Malformed or out-of-gate detection records."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        trial_id: int | None = None,
        offset: int | None = None,
    ):
        self.trial_id = trial_id
        self.offset = offset
        if trial_id is not None:
            message = f"trial {trial_id}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class AnalysisError(AfcDlczError):
    exit_code = 5


class SingleExcitationWarning(RuntimeWarning):
    """Mean photon number per mode is too high for the pair model."""
