"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three roots below rather than raising bare exceptions.
"""


class OtopipeError(Exception):
    """Base class for all toolkit errors."""


class DataError(OtopipeError):
    """Bad input data: malformed files, broken invariants, unknown labels.

    Mapped to exit code 2 by the CLI.
    """


class FormatError(DataError):
    """A serialized artifact could not be parsed.

    Messages carry line number and byte offset where parsing stopped.
    """

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class LeakageError(OtopipeError):
    """A leakage gate failed. Mapped to exit code 3 by the CLI."""
