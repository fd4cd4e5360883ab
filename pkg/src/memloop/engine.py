"""Task-planning state machine and session driver.

One session: observe (retrieve references), propose a plan via the chat
backend, execute it on the workspace, evaluate the result, loop through
error feedback up to the revision cap, and on a passing evaluation write
the session back to the memory repository before terminating.
"""

from __future__ import annotations

import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum

from .backends import ChatMessage
from .context import (
    ContextBundle,
    PrecisionThresholds,
    Reference,
    apply_contribution_feedback,
    compose,
    retrieve_references,
)
from .encoder import QueryObject, encode
from .errors import (
    BadArity,
    BackendUnavailable,
    IllegalTransition,
    UnknownAction,
    UnparseablePlan,
)
from .executor import (
    ACTION_SIGNATURES,
    ActionPlan,
    AtomicAction,
    ExecResult,
    Workspace,
    evaluate,
    execute,
)
from .repository import MemoryRepository, PrecisionLevel

logger = logging.getLogger(__name__)


class EngineState(str, Enum):
    INIT = "Init"
    OBSERVING = "Observing"
    PROPOSING = "Proposing"
    EXECUTING = "Executing"
    ERROR_FEEDBACK = "ErrorFeedback"
    EVALUATING = "Evaluating"
    MEMORIZING = "Memorizing"
    END = "End"
    FAIL = "Fail"


class Event(str, Enum):
    START = "start"
    REFERENCES_RETRIEVED = "references_retrieved"
    PLAN_PARSED = "plan_parsed"
    PLAN_REJECTED = "plan_rejected"
    REVISION_CAP = "revision_cap"
    STEPS_OK = "steps_ok"
    EXECUTOR_ERROR = "executor_error"
    FEEDBACK_COMPOSED = "feedback_composed"
    EVAL_PASS = "eval_pass"
    EVAL_FAIL = "eval_fail"
    EVAL_FAIL_FINAL = "eval_fail_final"
    MEMORY_COMMITTED = "memory_committed"


TRANSITIONS: dict[tuple[EngineState, Event], EngineState] = {
    (EngineState.INIT, Event.START): EngineState.OBSERVING,
    (EngineState.OBSERVING, Event.REFERENCES_RETRIEVED): EngineState.PROPOSING,
    (EngineState.PROPOSING, Event.PLAN_PARSED): EngineState.EXECUTING,
    (EngineState.PROPOSING, Event.PLAN_REJECTED): EngineState.ERROR_FEEDBACK,
    (EngineState.PROPOSING, Event.REVISION_CAP): EngineState.FAIL,
    (EngineState.EXECUTING, Event.STEPS_OK): EngineState.EVALUATING,
    (EngineState.EXECUTING, Event.EXECUTOR_ERROR): EngineState.ERROR_FEEDBACK,
    (EngineState.ERROR_FEEDBACK, Event.FEEDBACK_COMPOSED): EngineState.PROPOSING,
    (EngineState.EVALUATING, Event.EVAL_PASS): EngineState.MEMORIZING,
    (EngineState.EVALUATING, Event.EVAL_FAIL): EngineState.ERROR_FEEDBACK,
    (EngineState.EVALUATING, Event.EVAL_FAIL_FINAL): EngineState.FAIL,
    (EngineState.MEMORIZING, Event.MEMORY_COMMITTED): EngineState.END,
}

TERMINAL_STATES = frozenset({EngineState.END, EngineState.FAIL})


def step(state: EngineState, event: Event) -> EngineState:
    if state in TERMINAL_STATES:
        raise IllegalTransition(f"{state.value} is terminal")
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(f"no transition for ({state.value}, {event.value})") from None


# -- plan parsing ------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:actions)?\s*\n(.*?)```", re.DOTALL)
_CALL_RE = re.compile(r"^(\w+)\((.*)\)$")
_ARG_RE = re.compile(r"^\s*(\w+)\s*=\s*(.+?)\s*$")
_CONTRIB_RE = re.compile(r"^CONTRIBUTIONS:\s*(.*)$", re.MULTILINE)


def _parse_value(raw: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _split_args(body: str) -> list[str]:
    """Split on commas outside quotes."""
    parts, depth, quote, cur = [], 0, None, []
    for ch in body:
        if quote:
            cur.append(ch)
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
            cur.append(ch)
        elif ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return [p for p in (p.strip() for p in parts) if p]


def parse_plan(llm_output: str) -> tuple[ActionPlan, dict[int, int]]:
    """Parse a fenced action block (one ``name(param=value, ...)`` call
    per line) plus an optional ``CONTRIBUTIONS: 1=5,2=2`` line. A missing
    contribution line yields a neutral all-3 report for ordinals 1..n
    supplied later by the caller (here: empty mapping means neutral)."""
    m = _FENCE_RE.search(llm_output)
    if not m:
        raise UnparseablePlan("no fenced action block found")
    steps = []
    for line in m.group(1).splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        call = _CALL_RE.match(line)
        if not call:
            raise UnparseablePlan(f"malformed action line: {line!r}")
        name, body = call.group(1), call.group(2)
        signature = ACTION_SIGNATURES.get(name)
        if signature is None:
            raise UnknownAction(name)
        params = {}
        for arg in _split_args(body):
            am = _ARG_RE.match(arg)
            if not am:
                raise BadArity(f"{name}: malformed argument {arg!r}")
            params[am.group(1)] = _parse_value(am.group(2))
        if set(params) != set(signature):
            raise BadArity(
                f"{name} expects {sorted(signature)}, got {sorted(params)}"
            )
        steps.append(AtomicAction(name=name, params=params))
    if not steps:
        raise UnparseablePlan("action block is empty")

    report: dict[int, int] = {}
    cm = _CONTRIB_RE.search(llm_output)
    if cm:
        for chunk in cm.group(1).split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                ordinal, level = chunk.split("=")
                report[int(ordinal)] = max(1, min(5, int(level)))
            except ValueError:
                logger.warning("ignoring malformed contribution entry %r", chunk)
    return ActionPlan(steps=tuple(steps)), report


# -- session driver ----------------------------------------------------


@dataclass
class EngineConfig:
    base_prompt: str = (
        "You are a spreadsheet task planner. Reply with a fenced block of "
        "atomic actions, one name(param=value, ...) call per line, then a "
        "CONTRIBUTIONS: line rating each reference 1-5."
    )
    budget: int = 8192
    max_revisions: int = 3
    thresholds: PrecisionThresholds = field(default_factory=PrecisionThresholds)
    success_only: bool = True
    force_level: PrecisionLevel | None = None
    exclude_ids: frozenset[str] = frozenset()
    checker: list[dict] = field(default_factory=list)
    ground_truth_ops: int | None = None
    write_memory: bool = True


@dataclass
class SessionTranscript:
    request: str
    query_object: QueryObject | None = None
    state_sequence: list[str] = field(default_factory=list)
    contexts: list[str] = field(default_factory=list)
    llm_outputs: list[str] = field(default_factory=list)
    action_log: list[tuple[str, dict, str]] = field(default_factory=list)
    verdicts: list[list[dict]] = field(default_factory=list)
    feedback_texts: list[str] = field(default_factory=list)
    final_status: str = ""
    wall_time: float = 0.0


@dataclass
class SessionResult:
    status: EngineState
    executed: bool
    passed: bool
    op_ratio: float | None
    transcript: SessionTranscript
    plan: ActionPlan | None
    memory_ids: list[str] = field(default_factory=list)


def request_digest(request: str) -> str:
    return hashlib.sha256(request.encode("utf-8")).hexdigest()[:16]


@dataclass
class Backends:
    chat: object
    embedder: object
    encoder_llm: object | None = None
    summarizer_llm: object | None = None


def run_task(
    request: str,
    mr: MemoryRepository,
    backends: Backends,
    workspace: Workspace,
    config: EngineConfig | None = None,
) -> SessionResult:
    """Drive one task through the state machine to End or Fail."""
    from .writer import commit, summarize_session  # local: writer imports engine types

    config = config or EngineConfig()
    t0 = time.monotonic()
    transcript = SessionTranscript(request=request)
    state = EngineState.INIT

    def advance(event: Event):
        nonlocal state
        state = step(state, event)
        transcript.state_sequence.append(state.value)

    transcript.state_sequence.append(state.value)
    advance(Event.START)

    qo = encode(request, backends.encoder_llm)
    transcript.query_object = qo
    refs: list[Reference] = retrieve_references(
        qo,
        mr,
        backends.embedder,
        thresholds=config.thresholds,
        success_only=config.success_only,
        exclude_ids=config.exclude_ids,
        force_level=config.force_level,
    )
    advance(Event.REFERENCES_RETRIEVED)

    feedback: str | None = None
    plan = None
    exec_result: ExecResult | None = None
    passed = False
    proposals = 0
    fail_reason = None

    while state not in TERMINAL_STATES:
        if state is EngineState.PROPOSING:
            if proposals >= config.max_revisions + 1:
                advance(Event.REVISION_CAP)
                fail_reason = "revision cap reached"
                break
            proposals += 1
            base = f"{config.base_prompt}\n\nTASK: {request}"
            bundle = compose(base, refs, feedback, config.budget)
            transcript.contexts.append(bundle.render())
            try:
                output = backends.chat.chat_complete(
                    [ChatMessage("user", bundle.render())], max_tokens=2048
                )
            except BackendUnavailable as exc:
                transcript.final_status = EngineState.FAIL.value
                transcript.state_sequence.append(EngineState.FAIL.value)
                transcript.wall_time = time.monotonic() - t0
                logger.warning("chat backend unavailable: %s", exc)
                return SessionResult(
                    status=EngineState.FAIL,
                    executed=False,
                    passed=False,
                    op_ratio=_op_ratio(plan, config),
                    transcript=transcript,
                    plan=plan,
                )
            transcript.llm_outputs.append(output)
            try:
                plan, report = parse_plan(output)
            except (UnparseablePlan, UnknownAction, BadArity) as exc:
                feedback = f"FEEDBACK: your previous reply was rejected: {exc}"
                advance(Event.PLAN_REJECTED)
                transcript.feedback_texts.append(feedback)
                advance(Event.FEEDBACK_COMPOSED)
                continue
            if report:
                refs = apply_contribution_feedback(refs, report)
            advance(Event.PLAN_PARSED)

        elif state is EngineState.EXECUTING:
            exec_result = execute(plan, workspace)
            for sr in exec_result.steps:
                transcript.action_log.append(
                    (sr.action.name, dict(sr.action.params), sr.error or "ok")
                )
            if exec_result.ok:
                advance(Event.STEPS_OK)
            else:
                first_error = next(s for s in exec_result.steps if not s.ok)
                feedback = (
                    f"FEEDBACK: execution failed at {first_error.action.name}: "
                    f"{first_error.error}"
                )
                advance(Event.EXECUTOR_ERROR)
                transcript.feedback_texts.append(feedback)
                advance(Event.FEEDBACK_COMPOSED)

        elif state is EngineState.EVALUATING:
            ok, verdicts = evaluate(exec_result.workspace, config.checker)
            transcript.verdicts.append(
                [
                    {"predicate": v.predicate, "passed": v.passed, "detail": v.detail}
                    for v in verdicts
                ]
            )
            if ok:
                passed = True
                advance(Event.EVAL_PASS)
            elif proposals >= config.max_revisions + 1:
                advance(Event.EVAL_FAIL_FINAL)
                fail_reason = "evaluation failed at revision cap"
            else:
                failed = [v for v in verdicts if not v.passed]
                feedback = "FEEDBACK: evaluation failed: " + "; ".join(
                    f"{v.predicate['kind']} ({v.detail})" for v in failed
                )
                advance(Event.EVAL_FAIL)
                transcript.feedback_texts.append(feedback)
                advance(Event.FEEDBACK_COMPOSED)

        else:  # pragma: no cover - loop only dispatches the states above
            raise IllegalTransition(f"driver stuck in {state.value}")

        if state is EngineState.MEMORIZING:
            break

    memory_ids: list[str] = []
    if state is EngineState.MEMORIZING:
        transcript.final_status = EngineState.END.value
        if config.write_memory:
            bundle = summarize_session(
                transcript,
                plan=plan,
                passed=True,
                llm=backends.summarizer_llm,
            )
            memory_ids = commit(bundle, backends.embedder, mr, source_task=request_digest(request))
        advance(Event.MEMORY_COMMITTED)
    else:
        transcript.final_status = EngineState.FAIL.value
        if fail_reason:
            transcript.feedback_texts.append(f"FAIL: {fail_reason}")

    transcript.wall_time = time.monotonic() - t0
    executed = bool(exec_result and exec_result.ok and plan is not None)
    return SessionResult(
        status=state,
        executed=executed,
        passed=passed,
        op_ratio=_op_ratio(plan, config),
        transcript=transcript,
        plan=plan,
        memory_ids=memory_ids,
    )


def _op_ratio(plan, config: EngineConfig) -> float | None:
    if plan is None or not config.ground_truth_ops:
        return None
    return len(plan) / config.ground_truth_ops
