"""Durable store of precision-graded memory items.

Storage is an append-only JSON-lines log; the in-memory table and the
HNSW index are rebuilt when the repository is opened. Archives for
memory transfer use the ``.mrx`` line format (one flat record per item,
sorted by id, so exports are byte-deterministic).
"""

from __future__ import annotations

import json
import math
import os
import secrets
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path


from .errors import (
    DimensionMismatch,
    InvariantViolation,
    MalformedArchive,
    StorageFailure,
    UnknownId,
)
from .index.hnsw import HnswIndex, IndexParams, RWLock
from .tokens import count_tokens


class MemoryKind(str, Enum):
    TASK_MEMORY = "TaskMemory"
    KNOWLEDGE = "Knowledge"


class PrecisionLevel(str, Enum):
    ORIGINAL = "Original"
    CONCISE = "Concise"
    BRIEF = "Brief"

    @property
    def rank(self) -> int:
        return {"Original": 2, "Concise": 1, "Brief": 0}[self.value]

    def downgrade(self) -> "PrecisionLevel":
        return {
            PrecisionLevel.ORIGINAL: PrecisionLevel.CONCISE,
            PrecisionLevel.CONCISE: PrecisionLevel.BRIEF,
            PrecisionLevel.BRIEF: PrecisionLevel.BRIEF,
        }[self]

    def upgrade(self) -> "PrecisionLevel":
        return {
            PrecisionLevel.BRIEF: PrecisionLevel.CONCISE,
            PrecisionLevel.CONCISE: PrecisionLevel.ORIGINAL,
            PrecisionLevel.ORIGINAL: PrecisionLevel.ORIGINAL,
        }[self]


@dataclass(frozen=True)
class MemoryItem:
    id: str
    kind: MemoryKind
    original_text: str
    concise_text: str
    brief_text: str
    embedding: tuple[float, ...]
    success: bool
    created_at: str  # RFC 3339 UTC
    source_task: str | None = None

    def text_at(self, level: PrecisionLevel) -> str:
        return {
            PrecisionLevel.ORIGINAL: self.original_text,
            PrecisionLevel.CONCISE: self.concise_text,
            PrecisionLevel.BRIEF: self.brief_text,
        }[level]


def new_item_id() -> str:
    return secrets.token_hex(16)


def utc_now_rfc3339() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%f+00:00")


def _validate_item(item: MemoryItem, dim: int) -> None:
    for name in ("original_text", "concise_text", "brief_text"):
        if not getattr(item, name):
            raise InvariantViolation(f"{name} must be non-empty")
    if not (
        count_tokens(item.brief_text)
        <= count_tokens(item.concise_text)
        <= count_tokens(item.original_text)
    ):
        raise InvariantViolation("token counts must satisfy brief <= concise <= original")
    if len(item.embedding) != dim:
        raise DimensionMismatch(
            f"embedding dim {len(item.embedding)} != repository dim {dim}"
        )
    if not all(math.isfinite(v) for v in item.embedding):
        raise InvariantViolation("embedding has non-finite components")
    if not isinstance(item.kind, MemoryKind):
        raise InvariantViolation(f"bad kind: {item.kind!r}")


def _item_to_record(item: MemoryItem) -> dict:
    return {
        "id": item.id,
        "kind": item.kind.value,
        "original_text": item.original_text,
        "concise_text": item.concise_text,
        "brief_text": item.brief_text,
        "embedding": list(item.embedding),
        "success": item.success,
        "created_at": item.created_at,
        "source_task": item.source_task,
    }


def _item_from_record(rec: dict) -> MemoryItem:
    try:
        return MemoryItem(
            id=rec["id"],
            kind=MemoryKind(rec["kind"]),
            original_text=rec["original_text"],
            concise_text=rec["concise_text"],
            brief_text=rec["brief_text"],
            embedding=tuple(float(v) for v in rec["embedding"]),
            success=bool(rec["success"]),
            created_at=rec["created_at"],
            source_task=rec.get("source_task"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedArchive(f"bad record: {exc}") from exc


class MemoryRepository:
    """Append-only log of memory items with cosine relevance search."""

    def __init__(self, path: str | Path, dim: int = 768, index_params: IndexParams | None = None):
        self.path = Path(path)
        self.dim = dim
        self._params = index_params or IndexParams()
        self._items: dict[str, MemoryItem] = {}
        self._index = HnswIndex(dim, self._params)
        self._lock = RWLock()
        self._replay_log()

    # -- persistence ---------------------------------------------------

    def _replay_log(self):
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    op = rec["op"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise StorageFailure(f"{self.path}:{lineno}: {exc}") from exc
                if op == "insert":
                    item = _item_from_record(rec["item"])
                    self._items[item.id] = item
                    self._index.insert(item.id, item.embedding)
                elif op == "forget":
                    for item_id in rec["ids"]:
                        if item_id in self._items:
                            del self._items[item_id]
                            self._index.remove(item_id)
                else:
                    raise StorageFailure(f"{self.path}:{lineno}: unknown op {op!r}")

    def _append_log(self, rec: dict):
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc

    # -- operations ----------------------------------------------------

    def insert(self, item: MemoryItem) -> str:
        _validate_item(item, self.dim)
        with self._lock.write():
            if item.id in self._items:
                raise InvariantViolation(f"duplicate item id {item.id}")
            self._append_log({"op": "insert", "item": _item_to_record(item)})
            self._items[item.id] = item
            self._index.insert(item.id, item.embedding)
            return item.id

    def get(self, item_id: str) -> MemoryItem:
        with self._lock.read():
            try:
                return self._items[item_id]
            except KeyError:
                raise UnknownId(item_id) from None

    def count(self) -> int:
        with self._lock.read():
            return len(self._items)

    def items(self) -> list[MemoryItem]:
        with self._lock.read():
            return sorted(self._items.values(), key=lambda it: it.id)

    def search(
        self,
        query,
        kind: MemoryKind,
        k: int,
        success_only: bool = True,
        exclude_ids: frozenset[str] | set[str] = frozenset(),
    ) -> list[tuple[MemoryItem, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock.read():
            n = len(self._items)
            if n == 0:
                return []

            def keep(item: MemoryItem) -> bool:
                if item.kind is not kind:
                    return False
                if success_only and not item.success:
                    return False
                return item.id not in exclude_ids

            # Over-fetch and widen until the filtered hits cover k or the
            # whole index was scanned; small repositories end up exact.
            fetch = max(3 * k, 8)
            while True:
                fetch = min(fetch, n)
                ef = max(self._params.ef_search, fetch, min(n, 1024))
                hits = self._index.search(query, fetch, ef=ef)
                kept = [(self._items[i], s) for i, s in hits if keep(self._items[i])]
                if len(kept) >= k or fetch >= n:
                    return kept[:k]
                fetch *= 2

    def forget(self, ids) -> int:
        with self._lock.write():
            present = [i for i in ids if i in self._items]
            if present:
                self._append_log({"op": "forget", "ids": present})
                for item_id in present:
                    del self._items[item_id]
                    self._index.remove(item_id)
            return len(present)

    # -- memory transfer (.mrx archives) -------------------------------

    def export(self, destination: str | Path) -> int:
        with self._lock.read():
            items = sorted(self._items.values(), key=lambda it: it.id)
            try:
                with open(destination, "w", encoding="utf-8") as fh:
                    for item in items:
                        fh.write(
                            json.dumps(
                                _item_to_record(item),
                                ensure_ascii=False,
                                sort_keys=True,
                                separators=(",", ":"),
                            )
                            + "\n"
                        )
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            return len(items)

    def import_archive(self, source: str | Path, policy: str = "skip_duplicates") -> int:
        if policy not in ("skip_duplicates", "overwrite"):
            raise ValueError(f"unknown import policy {policy!r}")
        try:
            with open(source, encoding="utf-8") as fh:
                lines = [ln.strip() for ln in fh if ln.strip()]
        except OSError as exc:
            raise MalformedArchive(str(exc)) from exc
        incoming = []
        for lineno, line in enumerate(lines, 1):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedArchive(f"line {lineno}: {exc}") from exc
            item = _item_from_record(rec)
            if len(item.embedding) != self.dim:
                raise DimensionMismatch(
                    f"line {lineno}: archive dim {len(item.embedding)} != {self.dim}"
                )
            _validate_item(item, self.dim)
            incoming.append(item)
        imported = 0
        with self._lock.write():
            for item in incoming:
                if item.id in self._items:
                    if policy == "skip_duplicates":
                        continue
                    self._append_log({"op": "forget", "ids": [item.id]})
                    del self._items[item.id]
                    self._index.remove(item.id)
                self._append_log({"op": "insert", "item": _item_to_record(item)})
                self._items[item.id] = item
                self._index.insert(item.id, item.embedding)
                imported += 1
        return imported
