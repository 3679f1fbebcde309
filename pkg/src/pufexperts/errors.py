"""Exception types shared across the toolkit."""


class InvalidArgument(ValueError):
    pass


class FormatError(ValueError):
    """Malformed CRP or checkpoint file.

    ``offset`` is a byte offset for binary files, ``line`` a 1-based line
    number for text files; whichever does not apply is None.
    """

    def __init__(self, message, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte offset {offset}")
        if line is not None:
            where.append(f"line {line}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.offset = offset
        self.line = line


class TrainingDiverged(RuntimeError):
    pass


class SearchExhausted(RuntimeError):
    """CRP search hit its budget cap; ``ledger`` holds the trials so far."""

    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = list(ledger or [])
