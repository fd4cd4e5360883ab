"""In-memory table executor: the reference action surface for task runs.

A toy grid engine, not a spreadsheet-application bridge. Cells live in a
``(column letter, row)`` mapping; the registered atomic actions below are
the full action vocabulary known to the plan parser.
"""

from __future__ import annotations

import copy as _copy
import math
import re
from dataclasses import dataclass, field

from .errors import MalformedPredicate

# name -> ordered parameter names
ACTION_SIGNATURES: dict[str, tuple[str, ...]] = {
    "write_cell": ("addr", "value"),
    "set_formula": ("addr", "op", "range"),
    "sort_rows": ("col", "order"),
    "filter_rows": ("col", "predicate", "value"),
    "insert_column": ("col",),
    "delete_column": ("col",),
    "set_format": ("addr", "tag"),
    "create_chart": ("kind", "range"),
}

_ADDR_RE = re.compile(r"^([A-Z])([0-9]+)$")


class ActionError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class AtomicAction:
    name: str
    params: dict[str, object]


@dataclass(frozen=True)
class ActionPlan:
    steps: tuple[AtomicAction, ...]

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class Workspace:
    grid: dict[tuple[str, int], object] = field(default_factory=dict)
    charts: list[dict] = field(default_factory=list)
    formats: dict[tuple[str, int], str] = field(default_factory=dict)

    def copy(self) -> "Workspace":
        return Workspace(
            grid=dict(self.grid),
            charts=_copy.deepcopy(self.charts),
            formats=dict(self.formats),
        )

    @classmethod
    def from_cells(cls, cells: dict[str, object]) -> "Workspace":
        ws = cls()
        for addr, value in cells.items():
            ws.grid[parse_addr(addr)] = value
        return ws


@dataclass
class StepResult:
    action: AtomicAction
    ok: bool
    error: str | None = None


@dataclass
class ExecResult:
    steps: list[StepResult]
    workspace: Workspace

    @property
    def ok(self) -> bool:
        return all(s.ok for s in self.steps)


def parse_addr(addr: str) -> tuple[str, int]:
    m = _ADDR_RE.match(str(addr))
    if not m:
        raise ActionError("BadAddress", f"malformed address {addr!r}")
    col, row = m.group(1), int(m.group(2))
    if row < 1:
        raise ActionError("BadAddress", f"row must be >= 1 in {addr!r}")
    return col, row


def parse_range(rng: str) -> list[tuple[str, int]]:
    parts = str(rng).split(":")
    if len(parts) == 1:
        return [parse_addr(parts[0])]
    if len(parts) != 2:
        raise ActionError("BadAddress", f"malformed range {rng!r}")
    (c1, r1), (c2, r2) = parse_addr(parts[0]), parse_addr(parts[1])
    if c2 < c1 or r2 < r1:
        raise ActionError("BadAddress", f"inverted range {rng!r}")
    return [
        (chr(c), r)
        for c in range(ord(c1), ord(c2) + 1)
        for r in range(r1, r2 + 1)
    ]


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _numeric_values(ws: Workspace, cells) -> list[float]:
    out = []
    for cell in cells:
        v = ws.grid.get(cell)
        if v is None:
            continue
        if not _is_number(v):
            raise ActionError("TypeError", f"non-numeric value {v!r} at {cell[0]}{cell[1]}")
        out.append(float(v))
    return out


def _act_write_cell(ws: Workspace, addr, value):
    if _is_number(value) and not math.isfinite(value):
        raise ActionError("BadValue", "numbers must be finite")
    ws.grid[parse_addr(addr)] = value


def _act_set_formula(ws: Workspace, addr, op, range):  # noqa: A002 - registry name
    target = parse_addr(addr)
    if op not in ("sum", "avg", "min", "max"):
        raise ActionError("BadValue", f"unknown formula op {op!r}")
    values = _numeric_values(ws, parse_range(range))
    if not values and op != "sum":
        raise ActionError("TypeError", f"{op} over empty range")
    result = {
        "sum": sum,
        "avg": lambda v: sum(v) / len(v),
        "min": min,
        "max": max,
    }[op](values)
    ws.grid[target] = result


def _act_sort_rows(ws: Workspace, col, order):
    if order not in ("asc", "desc"):
        raise ActionError("BadValue", f"order must be asc or desc, got {order!r}")
    if not (isinstance(col, str) and len(col) == 1 and "A" <= col <= "Z"):
        raise ActionError("BadAddress", f"bad column {col!r}")
    occupied = sorted(r for c, r in ws.grid if c == col)
    values = [ws.grid[(col, r)] for r in occupied]
    kinds = {type(v) is str for v in values}
    if len(kinds) > 1:
        raise ActionError("TypeError", f"mixed types in column {col}")
    values.sort(reverse=(order == "desc"))
    for row, value in zip(occupied, values):
        ws.grid[(col, row)] = value


def _act_filter_rows(ws: Workspace, col, predicate, value):
    if predicate not in ("eq", "gt", "lt"):
        raise ActionError("BadValue", f"unknown predicate {predicate!r}")
    rows = sorted({r for _, r in ws.grid})
    for row in rows:
        cell = ws.grid.get((col, row))
        if predicate == "eq":
            keep = cell == value
        else:
            if cell is None:
                keep = False
            else:
                if not _is_number(cell) or not _is_number(value):
                    raise ActionError("TypeError", f"{predicate} needs numbers")
                keep = cell > value if predicate == "gt" else cell < value
        if not keep:
            for key in [k for k in ws.grid if k[1] == row]:
                del ws.grid[key]
            for key in [k for k in ws.formats if k[1] == row]:
                del ws.formats[key]


def _shift_columns(ws: Workspace, moved):
    ws.grid = {((moved(c), r)): v for (c, r), v in ws.grid.items() if moved(c) is not None}
    ws.formats = {((moved(c), r)): v for (c, r), v in ws.formats.items() if moved(c) is not None}


def _act_insert_column(ws: Workspace, col):
    parse_addr(f"{col}1")
    if any(c == "Z" for c, _ in ws.grid if c >= col):
        raise ActionError("BadAddress", "insert would shift data past column Z")

    def moved(c):
        return chr(ord(c) + 1) if c >= col else c

    _shift_columns(ws, moved)


def _act_delete_column(ws: Workspace, col):
    parse_addr(f"{col}1")

    def moved(c):
        if c == col:
            return None
        return chr(ord(c) - 1) if c > col else c

    _shift_columns(ws, moved)


def _act_set_format(ws: Workspace, addr, tag):
    ws.formats[parse_addr(addr)] = str(tag)


def _act_create_chart(ws: Workspace, kind, range):  # noqa: A002
    if kind not in ("bar", "line"):
        raise ActionError("BadValue", f"chart kind must be bar or line, got {kind!r}")
    parse_range(range)
    ws.charts.append({"kind": kind, "range": str(range)})


_HANDLERS = {
    "write_cell": _act_write_cell,
    "set_formula": _act_set_formula,
    "sort_rows": _act_sort_rows,
    "filter_rows": _act_filter_rows,
    "insert_column": _act_insert_column,
    "delete_column": _act_delete_column,
    "set_format": _act_set_format,
    "create_chart": _act_create_chart,
}


def execute(plan: ActionPlan, ws: Workspace) -> ExecResult:
    """Apply plan steps in order; the first failing step aborts with the
    pre-step workspace retained. The input workspace is never mutated."""
    current = ws.copy()
    steps: list[StepResult] = []
    for i, action in enumerate(plan.steps):
        handler = _HANDLERS.get(action.name)
        if handler is None:
            steps.append(StepResult(action, False, f"UnknownAction: {action.name}"))
            break
        trial = current.copy()
        try:
            handler(trial, **action.params)
        except ActionError as exc:
            steps.append(StepResult(action, False, str(exc)))
            break
        current = trial
        steps.append(StepResult(action, True))
    return ExecResult(steps=steps, workspace=current)


# -- evaluation predicates ---------------------------------------------


@dataclass
class Verdict:
    predicate: dict
    passed: bool
    detail: str = ""


def _check_cell_equals(ws: Workspace, args) -> tuple[bool, str]:
    cell = parse_addr(args["addr"])
    expected = args["value"]
    tol = float(args.get("tol", 1e-9))
    actual = ws.grid.get(cell)
    if _is_number(expected) and _is_number(actual):
        ok = abs(float(actual) - float(expected)) <= tol
    else:
        ok = actual == expected
    return ok, f"expected {expected!r}, found {actual!r}"


def _check_range_sorted(ws: Workspace, args) -> tuple[bool, str]:
    col, order = args["col"], args["order"]
    if order not in ("asc", "desc"):
        raise MalformedPredicate(f"order must be asc or desc, got {order!r}")
    values = [ws.grid[(c, r)] for c, r in sorted(ws.grid) if c == col]
    try:
        ordered = values == sorted(values, reverse=(order == "desc"))
    except TypeError:
        return False, f"mixed types in column {col}"
    return ordered, f"column {col} values {values!r}"


def _check_chart_exists(ws: Workspace, args) -> tuple[bool, str]:
    kind = args["kind"]
    ok = any(ch["kind"] == kind for ch in ws.charts)
    return ok, f"{len(ws.charts)} charts present"


def _check_cell_empty(ws: Workspace, args) -> tuple[bool, str]:
    cell = parse_addr(args["addr"])
    return cell not in ws.grid, f"cell {args['addr']}"


_CHECKS = {
    "cell_equals": (_check_cell_equals, {"addr", "value"}),
    "range_sorted": (_check_range_sorted, {"col", "order"}),
    "chart_exists": (_check_chart_exists, {"kind"}),
    "cell_empty": (_check_cell_empty, {"addr"}),
}


def evaluate(ws: Workspace, checker: list[dict]) -> tuple[bool, list[Verdict]]:
    """Run every predicate; pass iff all hold."""
    if not checker:
        raise MalformedPredicate("checker must be non-empty")
    verdicts = []
    for pred in checker:
        kind = pred.get("kind")
        if kind not in _CHECKS:
            raise MalformedPredicate(f"unknown predicate kind {kind!r}")
        fn, required = _CHECKS[kind]
        args = pred.get("args", {})
        missing = required - set(args)
        if missing:
            raise MalformedPredicate(f"{kind} missing args {sorted(missing)}")
        try:
            ok, detail = fn(ws, args)
        except ActionError as exc:
            raise MalformedPredicate(str(exc)) from exc
        verdicts.append(Verdict(predicate=pred, passed=ok, detail=detail))
    return all(v.passed for v in verdicts), verdicts
