"""Context assembly: retrieval, precision grading, labels, token budget.

References come back from the repository as up to three task memories plus
up to three knowledge items, merged by relevance. Each gets a precision
level from its relevance, a Key/General label, and may be downgraded or
dropped by the budget loop in :func:`compose`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .encoder import QueryObject
from .errors import BudgetTooSmall, EmbeddingFailure
from .repository import MemoryItem, MemoryKind, MemoryRepository, PrecisionLevel
from .tokens import count_tokens

KEY_REFERENCE = "Key Reference"
GENERAL_REFERENCE = "General Reference"

PER_KIND_LIMIT = 3


@dataclass
class PrecisionThresholds:
    original: float = 0.85
    concise: float = 0.60

    def __post_init__(self):
        if not -1.0 <= self.concise <= self.original <= 1.0:
            raise ValueError("need -1 <= concise <= original <= 1")


@dataclass
class Reference:
    item: MemoryItem
    relevance: float
    level: PrecisionLevel

    @property
    def label(self) -> str:
        return KEY_REFERENCE if self.level is PrecisionLevel.ORIGINAL else GENERAL_REFERENCE

    def render(self) -> str:
        header = (
            f"### {self.label} ({self.item.kind.value}, "
            f"relevance={self.relevance:.2f})"
        )
        return f"{header}\n{self.item.text_at(self.level)}\n"


@dataclass
class ContextBundle:
    base_prompt: str
    references: list[Reference]
    feedback: str | None
    token_total: int
    budget: int

    def render(self) -> str:
        parts = [self.base_prompt]
        parts.extend(ref.render() for ref in self.references)
        if self.feedback:
            parts.append(self.feedback)
        return "\n".join(parts)


def assign_precision(
    relevance: float, thresholds: PrecisionThresholds | None = None
) -> PrecisionLevel:
    if not -1.0 <= relevance <= 1.0:
        raise ValueError(f"relevance out of range: {relevance}")
    t = thresholds or PrecisionThresholds()
    if relevance >= t.original:
        return PrecisionLevel.ORIGINAL
    if relevance >= t.concise:
        return PrecisionLevel.CONCISE
    return PrecisionLevel.BRIEF


def retrieve_references(
    qo: QueryObject,
    mr: MemoryRepository,
    embedder,
    thresholds: PrecisionThresholds | None = None,
    success_only: bool = True,
    exclude_ids: frozenset[str] | set[str] = frozenset(),
    force_level: PrecisionLevel | None = None,
) -> list[Reference]:
    """Up to three task memories plus up to three knowledge items, merged
    and sorted by relevance. ``force_level`` pins every reference to one
    precision (used by the precision-comparison experiment)."""
    try:
        task_vec = embedder.embed(qo.task_memory_query)
        knowledge_vec = embedder.embed(qo.knowledge_query)
    except Exception as exc:
        raise EmbeddingFailure(str(exc)) from exc
    hits = mr.search(
        task_vec, MemoryKind.TASK_MEMORY, PER_KIND_LIMIT,
        success_only=success_only, exclude_ids=exclude_ids,
    )
    hits += mr.search(
        knowledge_vec, MemoryKind.KNOWLEDGE, PER_KIND_LIMIT,
        success_only=success_only, exclude_ids=exclude_ids,
    )
    refs = [
        Reference(
            item=item,
            relevance=score,
            level=force_level or assign_precision(score, thresholds),
        )
        for item, score in hits
    ]
    refs.sort(key=lambda r: (-r.relevance, r.item.id))
    return refs


def _total(base_prompt: str, refs: list[Reference], feedback: str | None) -> int:
    return (
        count_tokens(base_prompt)
        + count_tokens(feedback)
        + sum(count_tokens(r.render()) for r in refs)
    )


def compose(
    base_prompt: str,
    refs: list[Reference],
    feedback: str | None,
    budget: int,
) -> ContextBundle:
    """Fit references under the budget: repeatedly downgrade the
    lowest-relevance non-Brief reference, then start dropping the
    lowest-relevance reference outright. Never touches the base prompt."""
    base_cost = count_tokens(base_prompt) + count_tokens(feedback)
    if budget < base_cost:
        raise BudgetTooSmall(f"budget {budget} < fixed cost {base_cost}")
    kept = [replace(r) for r in refs]
    while kept and _total(base_prompt, kept, feedback) > budget:
        downgradable = [r for r in kept if r.level is not PrecisionLevel.BRIEF]
        if downgradable:
            victim = min(downgradable, key=lambda r: (r.relevance, r.item.id))
            victim.level = victim.level.downgrade()
        else:
            victim = min(kept, key=lambda r: (r.relevance, r.item.id))
            kept.remove(victim)
    return ContextBundle(
        base_prompt=base_prompt,
        references=kept,
        feedback=feedback,
        token_total=_total(base_prompt, kept, feedback),
        budget=budget,
    )


def apply_contribution_feedback(
    refs: list[Reference], report: dict[int, int]
) -> list[Reference]:
    """Adjust precision from the model's 1-5 contribution self-assessment.
    ``report`` maps 1-based reference ordinals to levels; missing entries
    leave the reference unchanged."""
    adjusted = []
    for i, ref in enumerate(refs, 1):
        level = ref.level
        contribution = report.get(i)
        if contribution is not None:
            if not 1 <= contribution <= 5:
                raise ValueError(f"contribution level out of range: {contribution}")
            if contribution >= 4:
                level = level.upgrade()
            elif contribution <= 2:
                level = level.downgrade()
        adjusted.append(replace(ref, level=level))
    return adjusted
