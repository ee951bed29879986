"""Exception types shared across the toolkit.

Two families exist: :class:`InvalidInputError` for anything a caller handed
us that fails validation (bad shapes, ranges, unparseable files), and
:class:`NumericError` for failures inside numeric routines. The CLI maps the
former to exit code 2 and the latter to exit code 3.
"""


class InvalidInputError(ValueError):
    """Raised when user-supplied data or configuration fails validation."""


class NpyParseError(InvalidInputError):
    """Malformed NPY file. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CsvParseError(InvalidInputError):
    """Malformed CSV file. Carries the 1-based line number of the bad row."""

    def __init__(self, message, line):
        super().__init__(f"{message} (line {line})")
        self.line = line


class NumericError(RuntimeError):
    """A numeric routine hit a non-finite value or could not make progress."""
