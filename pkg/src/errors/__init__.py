"""
__init__.py
-----------
Exception hierarchy shared by every package, each class mapped to a CLI exit code.
"""

from .errors import (
    AfcDlczError,
    AnalysisError,
    ConfigurationError,
    DataError,
    DomainError,
    SingleExcitationWarning,
    UsageError,
)

__all__ = [
    "AfcDlczError",
    "AnalysisError",
    "ConfigurationError",
    "DataError",
    "DomainError",
    "SingleExcitationWarning",
    "UsageError",
]
