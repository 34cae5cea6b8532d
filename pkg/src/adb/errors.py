"""Exception types raised across the package."""


class AdbError(Exception):
    """Base class for all package errors."""


class ArgumentError(AdbError, ValueError):
    """An argument is outside its documented domain."""


class ParseError(AdbError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatchError(AdbError, ValueError):
    def __init__(self, expected: int, got: int, line: int | None = None):
        self.expected = expected
        self.got = got
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}dimension mismatch: expected D={expected}, got D={got}")


class EmptyDatasetError(AdbError, ValueError):
    pass


class InsufficientDataError(AdbError, ValueError):
    pass


class ModelFormatError(AdbError, ValueError):
    pass


class RunFailedError(AdbError):
    """One run of a multi-run experiment failed; ``original`` holds the cause."""

    def __init__(self, run: int, seed: int, original: Exception):
        self.run = run
        self.seed = seed
        self.original = original
        super().__init__(f"run {run} (seed {seed}) failed: {original}")
