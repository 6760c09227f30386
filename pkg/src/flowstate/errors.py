"""Exception types shared across the package.

``DataError`` subclasses map to CLI exit code 2, ``TrainingError`` to 3.
"""

from __future__ import annotations


class FlowstateError(Exception):
    """Base class for all package errors."""


class DataError(FlowstateError):
    """Input data violates a documented contract."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, row: int | None = None):
        self.line = line
        self.row = row
        where = []
        if line is not None:
            where.append(f"line {line}")
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class RangeError(ParseError):
    def __init__(self, channel: str, value: float, line: int | None = None,
                 row: int | None = None):
        self.channel = channel
        self.value = value
        super().__init__(f"{channel}={value!r} outside allowed range", line, row)


class OrderingError(ParseError):
    pass


class GapError(DataError):
    def __init__(self, gaps):
        self.gaps = list(gaps)
        worst = max(g[1] - g[0] for g in self.gaps)
        super().__init__(f"{len(self.gaps)} gap(s) in the 10 Hz stream, largest {worst} ds")


class InsufficientMarkersError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class ShapeError(FlowstateError, ValueError):
    def __init__(self, what: str, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected shape {expected}, got {got}")


class StaleCacheError(FlowstateError):
    pass


class TrainingError(FlowstateError):
    """Training diverged or otherwise failed."""


class ConvergenceError(TrainingError):
    pass
