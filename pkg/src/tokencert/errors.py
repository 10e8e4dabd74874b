"""Exception types shared across the toolkit."""


class TraceFormatError(ValueError):
    """A trace file is malformed. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedKError(ValueError):
    """Requested top-k error for a k the trace does not track."""


class DecodeError(Exception):
    """Compressed payload cannot be decoded (truncated or corrupt)."""
