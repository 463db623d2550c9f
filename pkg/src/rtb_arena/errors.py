"""Exception types shared across the package.

Exit-code mapping lives in the CLI: usage errors -> 1, DataError -> 2,
NumericalError -> 3.
"""

from __future__ import annotations


class DataError(Exception):
    """Unusable input data: bad files, missing artifacts, invalid values."""


class ParseError(DataError):
    """A malformed log line; carries the 1-based line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class NumericalError(Exception):
    """A numerical abort: non-finite bids, losses, or parameters."""
