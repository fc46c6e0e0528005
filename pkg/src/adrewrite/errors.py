"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AdRewriteError(Exception):
    """Base class for every error raised by adrewrite."""


class DataError(AdRewriteError):
    """Invalid input data (corpus files, vectors, ledgers)."""


class BackendError(AdRewriteError):
    """A remote embedder or LLM misbehaved or was unreachable."""


# -- embedding / vectors ---------------------------------------------------

class ZeroVector(DataError):
    pass


class NonFinite(DataError):
    pass


class DimMismatch(DataError):
    pass


class ServiceUnavailable(BackendError):
    pass


# -- index -----------------------------------------------------------------

class DuplicateId(DataError):
    def __init__(self, doc_id: str, line: int | None = None):
        self.doc_id = doc_id
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate id {doc_id!r}{where}")


class EmptyIndex(DataError):
    pass


class UnknownDoc(DataError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"unknown document id {doc_id!r}")


class SnapshotError(DataError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at byte offset {offset}")


# -- corpus ----------------------------------------------------------------

class ParseError(DataError):
    """Unparseable input. ``line`` is set for file input, ``raw`` for LLM output."""

    def __init__(self, message: str, line: int | None = None, raw: str | None = None):
        self.line = line
        self.raw = raw
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingField(DataError):
    def __init__(self, field: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}missing or empty field {field!r}")


# -- loss / reward ---------------------------------------------------------

class InsufficientCandidates(DataError):
    pass


class NoRelevantQueries(DataError):
    pass


# -- metrics ---------------------------------------------------------------

class MissingLedgerEntry(DataError):
    pass


class EmptyQuerySet(DataError):
    pass


class MissingInclusion(DataError):
    pass


# -- llm gateway -----------------------------------------------------------

class MissingSlot(DataError):
    pass


class TransportError(BackendError):
    pass
