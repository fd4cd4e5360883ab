"""Task suites, multi-round experiments, and the round metrics.

A suite is a YAML/JSON document with a ``tasks`` array. Rounds run every
task once through the engine against a persistent memory repository;
passing sessions are committed to memory live, so later tasks in the same
round already see earlier successes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .engine import (
    Backends,
    EngineConfig,
    EngineState,
    SessionResult,
    request_digest,
    run_task,
)
from .errors import (
    DuplicateTaskId,
    EmptyRatios,
    EmptyResults,
    MalformedSuite,
)
from .executor import Workspace
from .repository import MemoryRepository

logger = logging.getLogger(__name__)


@dataclass
class TaskSpec:
    id: str
    request: str
    initial_workspace: dict[str, object]
    checker: list[dict]
    ground_truth_ops: int


@dataclass
class TaskDigest:
    task_id: str
    status: str
    executed: bool
    passed: bool
    op_ratio: float | None
    memory_ids: list[str]

    def to_record(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "executed": self.executed,
            "passed": self.passed,
            "op_ratio": self.op_ratio,
            "memory_ids": self.memory_ids,
        }


@dataclass
class RoundReport:
    round: int
    exec_at_1: float
    pass_at_1: float
    a50: float
    a90: float
    per_task: list[TaskDigest]
    wall_time: float
    mr_size_before: int
    mr_size_after: int


def load_suite(path: str | Path) -> list[TaskSpec]:
    path = Path(path)
    if not path.exists():
        raise MalformedSuite(f"no such suite file: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise MalformedSuite(str(exc)) from exc
    return parse_suite(doc)


def parse_suite(doc) -> list[TaskSpec]:
    if not isinstance(doc, dict) or not isinstance(doc.get("tasks"), list):
        raise MalformedSuite("suite must be a document with a tasks array")
    specs: list[TaskSpec] = []
    seen = set()
    for i, raw in enumerate(doc["tasks"]):
        try:
            spec = TaskSpec(
                id=str(raw["id"]),
                request=str(raw["request"]),
                initial_workspace=dict(raw.get("initial_workspace") or {}),
                checker=list(raw["checker"]),
                ground_truth_ops=int(raw["ground_truth_ops"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSuite(f"task #{i}: {exc}") from exc
        if not spec.request:
            raise MalformedSuite(f"task {spec.id}: empty request")
        if not spec.checker:
            raise MalformedSuite(f"task {spec.id}: checker must be non-empty")
        if spec.ground_truth_ops < 1:
            raise MalformedSuite(f"task {spec.id}: ground_truth_ops must be >= 1")
        if spec.id in seen:
            raise DuplicateTaskId(spec.id)
        seen.add(spec.id)
        specs.append(spec)
    return specs


# -- metrics -----------------------------------------------------------


def metric_exec_at_1(results: list[TaskDigest]) -> float:
    if not results:
        raise EmptyResults("no results")
    return sum(1 for r in results if r.executed) / len(results)


def metric_pass_at_1(results: list[TaskDigest]) -> float:
    if not results:
        raise EmptyResults("no results")
    return sum(1 for r in results if r.passed) / len(results)


def metric_a_percentile(ratios: list[float], p: int) -> float:
    """Nearest-rank percentile: 1-based rank ceil(p/100 * n) of the
    ascending-sorted ratios."""
    if not ratios:
        raise EmptyRatios("no ratios")
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be > 0")
    ordered = sorted(ratios)
    rank = math.ceil(p / 100 * len(ordered))
    return ordered[max(rank, 1) - 1]


# -- rounds and experiments --------------------------------------------


def run_round(
    suite: list[TaskSpec],
    mr: MemoryRepository,
    backends: Backends,
    config: EngineConfig,
    round_number: int = 1,
    parallelism: int = 1,
) -> RoundReport:
    t0 = time.monotonic()
    size_before = mr.count()
    # ids committed this round, by originating request digest; a task never
    # retrieves a memory it created itself within the same round
    committed_this_round: dict[str, list[str]] = {}

    def run_one(spec: TaskSpec) -> TaskDigest:
        own = frozenset(committed_this_round.get(request_digest(spec.request), []))
        task_config = replace(
            config,
            checker=spec.checker,
            ground_truth_ops=spec.ground_truth_ops,
            exclude_ids=config.exclude_ids | own,
        )
        ws = Workspace.from_cells(spec.initial_workspace)
        try:
            result: SessionResult = run_task(spec.request, mr, backends, ws, task_config)
        except Exception as exc:
            logger.warning("task %s raised: %s", spec.id, exc)
            return TaskDigest(spec.id, EngineState.FAIL.value, False, False, None, [])
        if result.memory_ids:
            committed_this_round.setdefault(
                request_digest(spec.request), []
            ).extend(result.memory_ids)
        return TaskDigest(
            task_id=spec.id,
            status=result.status.value,
            executed=result.executed,
            passed=result.passed,
            op_ratio=result.op_ratio,
            memory_ids=result.memory_ids,
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            digests = list(pool.map(run_one, suite))
    else:
        digests = [run_one(spec) for spec in suite]

    ratios = [d.op_ratio for d in digests if d.op_ratio is not None]
    return RoundReport(
        round=round_number,
        exec_at_1=metric_exec_at_1(digests),
        pass_at_1=metric_pass_at_1(digests),
        a50=metric_a_percentile(ratios, 50) if ratios else 0.0,
        a90=metric_a_percentile(ratios, 90) if ratios else 0.0,
        per_task=digests,
        wall_time=time.monotonic() - t0,
        mr_size_before=size_before,
        mr_size_after=mr.count(),
    )


def run_experiment(
    suite: list[TaskSpec],
    rounds: int,
    mr: MemoryRepository,
    backends: Backends,
    config: EngineConfig,
    parallelism: int = 1,
) -> tuple[list[RoundReport], dict]:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    reports = [
        run_round(suite, mr, backends, config, round_number=r, parallelism=parallelism)
        for r in range(1, rounds + 1)
    ]
    summary = {
        "rounds": rounds,
        "tasks": len(suite),
        "pass_at_1": [r.pass_at_1 for r in reports],
        "exec_at_1": [r.exec_at_1 for r in reports],
        "pass_at_1_delta": [
            round(b.pass_at_1 - a.pass_at_1, 6)
            for a, b in zip(reports, reports[1:])
        ],
        "mr_size_final": reports[-1].mr_size_after,
    }
    return reports, summary


def write_report(reports: list[RoundReport], summary: dict, path: str | Path) -> None:
    """Line-delimited task records plus one summary record."""
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            for digest in report.per_task:
                rec = {"round": report.round, **digest.to_record()}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        fh.write(json.dumps({"summary": summary}, ensure_ascii=False) + "\n")


def format_report_table(reports: list[RoundReport]) -> str:
    lines = [
        f"{'round':>5}  {'exec@1':>7}  {'pass@1':>7}  {'A50':>6}  {'A90':>6}  "
        f"{'MR before':>9}  {'MR after':>8}  {'time(s)':>8}"
    ]
    for r in reports:
        lines.append(
            f"{r.round:>5}  {r.exec_at_1:>7.3f}  {r.pass_at_1:>7.3f}  "
            f"{r.a50:>6.2f}  {r.a90:>6.2f}  {r.mr_size_before:>9}  "
            f"{r.mr_size_after:>8}  {r.wall_time:>8.2f}"
        )
    return "\n".join(lines)
