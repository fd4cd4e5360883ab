"""Memory-loop task orchestration engine.

Runs tool-generation tasks through a chat backend, recycles every session
into a precision-graded memory repository, and reuses those memories via
relevance-ranked, token-budgeted context assembly.
"""

__version__ = "0.1.0"

from .repository import MemoryItem, MemoryKind, MemoryRepository, PrecisionLevel

__all__ = [
    "MemoryItem",
    "MemoryKind",
    "MemoryRepository",
    "PrecisionLevel",
    "__version__",
]
