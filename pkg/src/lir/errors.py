"""Exception hierarchy.

Everything raised on bad data derives from :class:`LirError`; the CLI maps
those to exit code 2.
"""

from __future__ import annotations

from typing import Iterable, Optional


class LirError(Exception):
    """Base class for all data and parameter errors raised by this package."""


class DimensionError(LirError, ValueError):
    """Embedding dimensionalities do not agree."""


class EmptyInputError(LirError, ValueError):
    """A matrix, list or corpus that must be non-empty was empty."""


class NotNormalizedError(LirError, ValueError):
    """A token row is not unit-norm, or contains non-finite values."""


class ParameterError(LirError, ValueError):
    """An operation parameter is out of its allowed range."""


class FormatError(LirError):
    """A binary file is malformed.

    Attributes:
        offset: byte offset at which the problem was detected, if known.
    """

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ParseError(LirError):
    """A text file line could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class CorruptIndexError(LirError):
    """A token row id does not exist in the embedding store."""


class DuplicateCandidateError(LirError, ValueError):
    """The same document id appears twice in a candidate list."""


class MissingDocumentError(LirError, KeyError):
    """A requested document id is not in the store."""

    def __init__(self, doc_id: int, num_docs: int):
        self.doc_id = doc_id
        super().__init__(f"document {doc_id} not in store (numDocs={num_docs})")

    def __str__(self) -> str:
        return self.args[0]


class DegenerateMaxError(LirError, ArithmeticError):
    """A MaxSim argmax is not unique, so the gradient is undefined there."""


class DataConsistencyError(LirError):
    """Ids disagree across inputs (queries, qrels, corpus, store)."""

    def __init__(self, message: str, offenders: Iterable = ()):
        self.offenders = list(offenders)
        if self.offenders:
            shown = ", ".join(str(o) for o in self.offenders[:20])
            more = "" if len(self.offenders) <= 20 else f" (+{len(self.offenders) - 20} more)"
            message = f"{message}: {shown}{more}"
        super().__init__(message)
