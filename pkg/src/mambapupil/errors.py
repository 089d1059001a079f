"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ``ConfigError`` -> 1,
``DataError`` -> 2, ``NumericError`` -> 3.
"""

from __future__ import annotations


class MambaPupilError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MambaPupilError, ValueError):
    """Invalid configuration value. ``path`` names the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


class DataError(MambaPupilError, ValueError):
    """Malformed or inconsistent input data."""


class EventFormatError(DataError):
    """An event or label file failed to parse."""

    def __init__(self, path: str, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class NumericError(MambaPupilError, ArithmeticError):
    """Training produced a non-finite value."""
