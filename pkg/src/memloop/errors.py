"""Exception hierarchy shared across the package."""


class MemloopError(Exception):
    """Base class for all package errors."""


# vector index
class DimensionMismatch(MemloopError):
    pass


class DuplicateId(MemloopError):
    pass


class ZeroVector(MemloopError):
    pass


class EmptyIndex(MemloopError):
    pass


class UnknownId(MemloopError):
    pass


# repository
class InvariantViolation(MemloopError):
    pass


class StorageFailure(MemloopError):
    pass


class MalformedArchive(MemloopError):
    pass


# request encoder
class EmptyRequest(MemloopError):
    pass


# context assembler
class BudgetTooSmall(MemloopError):
    pass


# backends
class BackendUnavailable(MemloopError):
    pass


class MalformedResponse(MemloopError):
    pass


class NoMatch(MemloopError):
    pass


class EmbeddingFailure(MemloopError):
    pass


# task engine
class UnparseablePlan(MemloopError):
    pass


class UnknownAction(MemloopError):
    pass


class BadArity(MemloopError):
    pass


class IllegalTransition(MemloopError):
    pass


class MalformedPredicate(MemloopError):
    pass


# memory writer
class TranscriptTooEarly(MemloopError):
    pass


class CommitFailure(StorageFailure):
    """Commit aborted mid-way; ``partial_ids`` lists items already durable."""

    def __init__(self, message: str, partial_ids: list[str]):
        super().__init__(message)
        self.partial_ids = partial_ids


# eval harness
class MalformedSuite(MemloopError):
    pass


class DuplicateTaskId(MemloopError):
    pass


class EmptyResults(MemloopError):
    pass


class EmptyRatios(MemloopError):
    pass
