"""Request encoding: decompose a user request into repository queries.

The request is split into a task-memory dimension and a knowledge
dimension by a lightweight chat backend; auxiliary facets (semantics,
spatiotemporal, operations, files) are advisory metadata. Any backend
failure degrades to the deterministic keyword fallback, so encoding
never fails for a non-empty request.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .backends import ChatMessage
from .errors import EmptyRequest
from .executor import ACTION_SIGNATURES

logger = logging.getLogger(__name__)

FACET_NAMES = ("semantics", "spatiotemporal", "operations", "files")

# keyword -> action; matched case-insensitively against the request text
ACTION_KEYWORDS: dict[str, str] = {}
for _name in ACTION_SIGNATURES:
    ACTION_KEYWORDS[_name] = _name
    for _part in _name.split("_"):
        ACTION_KEYWORDS.setdefault(_part, _name)
ACTION_KEYWORDS.setdefault("chart", "create_chart")
ACTION_KEYWORDS.setdefault("formula", "set_formula")
ACTION_KEYWORDS.setdefault("format", "set_format")


@dataclass
class QueryObject:
    task_memory_query: str
    knowledge_query: str
    raw_request: str
    facets: dict[str, str | None] = field(
        default_factory=lambda: {name: None for name in FACET_NAMES}
    )


_DECOMPOSE_PROMPT = (
    "Decompose the user request into two retrieval queries for a memory "
    "store. Reply with exactly two lines:\n"
    "TASK_QUERY: <query describing the task to match past task narratives>\n"
    "KNOWLEDGE_QUERY: <query describing facts or lessons that would help>\n"
    "No other text."
)


def _matched_operations(request: str) -> str | None:
    lower = request.lower()
    found: list[tuple[int, str]] = []
    for keyword in ACTION_KEYWORDS:
        pos = lower.find(keyword)
        if pos >= 0:
            found.append((pos, keyword))
    if not found:
        return None
    seen = []
    for _, kw in sorted(found):
        if kw not in seen:
            seen.append(kw)
    return ",".join(seen)


def fallback_encode(request: str) -> QueryObject:
    """Degraded mode: both dimension queries are the raw request; the
    operations facet lists action keywords found in the text."""
    if not request:
        raise EmptyRequest("request must be non-empty")
    qo = QueryObject(
        task_memory_query=request,
        knowledge_query=request,
        raw_request=request,
    )
    qo.facets["operations"] = _matched_operations(request)
    return qo


def encode(request: str, llm=None) -> QueryObject:
    """Backend-assisted decomposition with guaranteed fallback."""
    if not request:
        raise EmptyRequest("request must be non-empty")
    if llm is None:
        return fallback_encode(request)
    try:
        reply = llm.chat_complete(
            [
                ChatMessage("system", _DECOMPOSE_PROMPT),
                ChatMessage("user", request),
            ],
            max_tokens=256,
        )
    except Exception as exc:
        logger.warning("decomposition backend unavailable, using fallback: %s", exc)
        return fallback_encode(request)

    task_q = knowledge_q = None
    for line in reply.splitlines():
        m = re.match(r"^\s*TASK_QUERY:\s*(.+)$", line)
        if m:
            task_q = m.group(1).strip()
        m = re.match(r"^\s*KNOWLEDGE_QUERY:\s*(.+)$", line)
        if m:
            knowledge_q = m.group(1).strip()
    if not task_q or not knowledge_q:
        logger.warning("unparseable decomposition reply, using fallback")
        return fallback_encode(request)
    qo = QueryObject(
        task_memory_query=task_q,
        knowledge_query=knowledge_q,
        raw_request=request,
    )
    qo.facets["operations"] = _matched_operations(request)
    return qo
