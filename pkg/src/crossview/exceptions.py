"""Exception hierarchy shared across the toolkit.

Every error raised on a documented failure path derives from
:class:`CrossViewError` so CLI entry points can catch one type and exit
nonzero with a readable message.
"""

from __future__ import annotations


class CrossViewError(Exception):
    """Base class for all toolkit errors."""


class ManifestParseError(CrossViewError):
    """A manifest line could not be parsed.

    Carries the path and 1-based line number of the offending record.
    """

    def __init__(self, path: str, line_no: int, reason: str):
        self.path = path
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{path}:{line_no}: {reason}")


class ValidationError(CrossViewError):
    """Well-formed input violated a documented invariant."""


class StoreFormatError(CrossViewError):
    """A feature-store or index file has a bad magic string or version."""


class StoreCorruptionError(CrossViewError):
    """A feature-store payload ended early or failed its length checks."""

    def __init__(self, path: str, offset: int, reason: str):
        self.path = path
        self.offset = offset
        self.reason = reason
        super().__init__(f"{path} at byte {offset}: {reason}")


class ShapeError(CrossViewError):
    """An array argument had the wrong shape or dtype."""


class NumericError(CrossViewError):
    """A computation received or produced non-finite values."""


class RefinerTransportError(CrossViewError):
    """The remote refiner endpoint stayed unreachable after retries."""


class RefinementParseError(CrossViewError):
    """A refiner response did not contain one caption per input line.

    The raw response is preserved for offline inspection.
    """

    def __init__(self, reason: str, raw_response: str):
        self.raw_response = raw_response
        super().__init__(f"{reason} (raw response preserved on .raw_response)")
