"""Session summarization and commit into the memory repository.

Every finished session becomes a task-memory item; a knowledge item is
added only when the run produced error-feedback lessons (or an explicit
RATIONALE line in a model reply). Summaries are extractive and
deterministic; a summarizer backend, when given, may rewrite the concise
knowledge text but is never required.
"""

from __future__ import annotations

import logging

from dataclasses import dataclass

from .backends import ChatMessage
from .engine import SessionTranscript
from .errors import CommitFailure, EmbeddingFailure, TranscriptTooEarly
from .executor import ActionPlan
from .repository import (
    MemoryItem,
    MemoryKind,
    MemoryRepository,
    new_item_id,
    utc_now_rfc3339,
)
from .tokens import count_tokens

logger = logging.getLogger(__name__)


@dataclass
class KindSummary:
    original_text: str
    concise_text: str
    brief_text: str


@dataclass
class SummaryBundle:
    task_memory: KindSummary
    knowledge: KindSummary | None
    success: bool


def _render_plan(plan: ActionPlan | None) -> str:
    if plan is None:
        return ""
    lines = []
    for step in plan.steps:
        args = ", ".join(f"{k}={v!r}" for k, v in step.params.items())
        lines.append(f"{step.name}({args})")
    return "\n".join(lines)


def _render_verdicts(transcript: SessionTranscript) -> str:
    lines = []
    for i, verdict_set in enumerate(transcript.verdicts, 1):
        for v in verdict_set:
            lines.append(
                f"check {i}: {v['predicate']['kind']} -> "
                f"{'pass' if v['passed'] else 'fail'} ({v['detail']})"
            )
    return "\n".join(lines)


def _rationale_lines(transcript: SessionTranscript) -> list[str]:
    out = []
    for reply in transcript.llm_outputs:
        for line in reply.splitlines():
            if line.strip().startswith("RATIONALE:"):
                out.append(line.strip())
    return out


def summarize_session(
    transcript: SessionTranscript,
    plan: ActionPlan | None = None,
    passed: bool | None = None,
    llm=None,
) -> SummaryBundle:
    """Three-precision extractive summary of one finished session."""
    if not transcript.llm_outputs:
        raise TranscriptTooEarly("session never reached Proposing")
    if passed is None:
        passed = transcript.final_status == "End"

    request = transcript.request
    plan_text = _render_plan(plan)
    verdict_text = _render_verdicts(transcript)

    original = request
    if plan_text:
        original += "\n" + plan_text
    if verdict_text:
        original += "\n" + verdict_text
    concise = request + ("\n" + plan_text if plan_text else "")
    action_names = [step.name for step in plan.steps] if plan else []
    brief = request.splitlines()[0]
    if action_names:
        brief += " | " + ",".join(action_names)
    task_memory = KindSummary(original, concise, brief)

    lessons = [t for t in transcript.feedback_texts if t.startswith("FEEDBACK:")]
    lessons += _rationale_lines(transcript)
    knowledge = None
    if lessons:
        k_original = request + "\n" + "\n".join(lessons)
        k_concise = "\n".join(lessons)
        if llm is not None:
            k_concise = _llm_concise(llm, request, lessons, k_original) or k_concise
        # brief derived from the chosen concise text so the precision
        # ordering holds by construction
        k_brief = k_concise.splitlines()[0]
        knowledge = KindSummary(k_original, k_concise, k_brief)

    return SummaryBundle(task_memory=task_memory, knowledge=knowledge, success=passed)


def _llm_concise(llm, request, lessons, original) -> str | None:
    try:
        reply = llm.chat_complete(
            [
                ChatMessage(
                    "system",
                    "Condense the lessons below into one short paragraph of "
                    "reusable knowledge. Reply with the paragraph only.",
                ),
                ChatMessage("user", request + "\n" + "\n".join(lessons)),
            ],
            max_tokens=256,
        )
    except Exception as exc:
        logger.warning("summarizer backend failed, keeping extractive text: %s", exc)
        return None
    reply = reply.strip()
    if not reply:
        return None
    if count_tokens(reply) > count_tokens(original):
        return None  # would break precision-ordering invariant
    return reply


def commit(
    bundle: SummaryBundle,
    embedder,
    mr: MemoryRepository,
    source_task: str | None = None,
) -> list[str]:
    """One memory item per kind present in the bundle; embeddings come
    from the concise text. Partial failures report ids already durable."""
    ids: list[str] = []
    pairs = [(MemoryKind.TASK_MEMORY, bundle.task_memory)]
    if bundle.knowledge is not None:
        pairs.append((MemoryKind.KNOWLEDGE, bundle.knowledge))
    for kind, summary in pairs:
        try:
            vec = embedder.embed(summary.concise_text)
        except Exception as exc:
            err = EmbeddingFailure(f"embedding failed for {kind.value}: {exc}")
            err.partial_ids = list(ids)
            raise err from exc
        item = MemoryItem(
            id=new_item_id(),
            kind=kind,
            original_text=summary.original_text,
            concise_text=summary.concise_text,
            brief_text=summary.brief_text,
            embedding=tuple(vec),
            success=bundle.success,
            created_at=utc_now_rfc3339(),
            source_task=source_task,
        )
        try:
            ids.append(mr.insert(item))
        except Exception as exc:
            raise CommitFailure(f"insert failed for {kind.value}: {exc}", list(ids)) from exc
    return ids
