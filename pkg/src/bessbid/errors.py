"""Exception types shared across the package."""

from __future__ import annotations


class BessbidError(Exception):
    """Base class for all package errors."""


class ValidationError(BessbidError):
    """Input data or configuration violates a documented invariant."""


class ParseError(ValidationError):
    """A data file could not be parsed; carries file and line context."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:" if line is None else f"{path}:{line}:"
        super().__init__(f"{where} {message}".strip())
        self.path = path
        self.line = line


class ModelBuildError(BessbidError):
    """Model construction failed (dimension mismatch, bad family data)."""


class ConsistencyError(BessbidError):
    """Two redundant computations of the same quantity disagree.

    Raised by post-solve checks; indicates a linearization or solver bug,
    never bad user data.
    """


class EnumerationLimitError(BessbidError):
    """Instance is too large for the exhaustive reference solver."""
