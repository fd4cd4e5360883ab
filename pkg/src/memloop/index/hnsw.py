"""HNSW approximate nearest-neighbor index over cosine similarity.

Multi-layer navigable small world graph (Malkov & Yashunin) with an exact
brute-force search kept alongside as the test oracle. Vectors are stored
unit-normalized so similarity is a plain dot product, computed by the
compiled kernels when the extension built.

Deletions are tombstones; the graph is rebuilt once more than 25% of the
stored entries are dead.
"""

from __future__ import annotations

import heapq
import math
import random
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ..errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyIndex,
    UnknownId,
    ZeroVector,
)
from . import kernels

COMPACTION_DEAD_FRACTION = 0.25


class RWLock:
    """Many readers or one writer. Writers wait for readers to drain."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writing = False

    @contextmanager
    def read(self):
        with self._cond:
            while self._writing:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            while self._writing or self._readers:
                self._cond.wait()
            self._writing = True
        try:
            yield
        finally:
            with self._cond:
                self._writing = False
                self._cond.notify_all()


@dataclass
class IndexParams:
    m: int = 16
    ef_construction: int = 128
    ef_search: int = 64
    metric: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if self.ef_construction < self.m:
            raise ValueError("ef_construction must be >= m")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")
        if self.metric != "cosine":
            raise ValueError(f"unsupported metric: {self.metric}")


def _normalize(values, dim: int) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dim:
        raise DimensionMismatch(f"expected dim {dim}, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ZeroVector("vector has non-finite components")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ZeroVector("zero vector is not indexable")
    return vec / norm


class HnswIndex:
    """Cosine-similarity HNSW index keyed by opaque string ids."""

    def __init__(self, dim: int, params: IndexParams | None = None):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.params = params or IndexParams()
        self._level_mult = 1.0 / math.log(self.params.m)
        self._rng = random.Random(self.params.seed)
        self._lock = RWLock()
        self._reset_storage()

    def _reset_storage(self):
        self._mat = np.empty((64, self.dim), dtype=np.float64)
        self._ids: list[str] = []
        self._slot: dict[str, int] = {}
        self._levels: list[int] = []
        # per slot: layer -> list of neighbor slots
        self._links: list[dict[int, list[int]]] = []
        self._dead: set[int] = set()
        self._entry: int | None = None
        self._max_level = -1

    def __len__(self) -> int:
        return len(self._ids) - len(self._dead)

    @property
    def ids(self) -> list[str]:
        with self._lock.read():
            return [i for s, i in enumerate(self._ids) if s not in self._dead]

    # -- insertion -----------------------------------------------------

    def insert(self, entry_id: str, values) -> None:
        vec = _normalize(values, self.dim)
        with self._lock.write():
            if entry_id in self._slot:
                raise DuplicateId(entry_id)
            self._insert_unlocked(entry_id, vec)

    def _insert_unlocked(self, entry_id: str, vec: np.ndarray):
        slot = len(self._ids)
        if slot == self._mat.shape[0]:
            grown = np.empty((2 * slot, self.dim), dtype=np.float64)
            grown[:slot] = self._mat[:slot]
            self._mat = grown
        self._mat[slot] = vec
        self._ids.append(entry_id)
        self._slot[entry_id] = slot
        level = int(-math.log(self._rng.random() + 1e-300) * self._level_mult)
        self._levels.append(level)
        self._links.append({lc: [] for lc in range(level + 1)})

        if self._entry is None:
            self._entry = slot
            self._max_level = level
            return

        m = self.params.m
        eps = [self._entry]
        for lc in range(self._max_level, level, -1):
            eps = [s for _, s in self._search_layer(vec, eps, 1, lc)]
        for lc in range(min(level, self._max_level), -1, -1):
            found = self._search_layer(vec, eps, self.params.ef_construction, lc)
            neighbors = [s for _, s in heapq.nlargest(m, found)]
            self._links[slot][lc] = list(neighbors)
            m_max = 2 * m if lc == 0 else m
            for nb in neighbors:
                nb_links = self._links[nb][lc]
                nb_links.append(slot)
                if len(nb_links) > m_max:
                    sims = kernels.scores_for_rows(
                        self._mat, np.asarray(nb_links, dtype=np.int64), self._mat[nb]
                    )
                    order = np.argsort(-sims)[:m_max]
                    self._links[nb][lc] = [nb_links[i] for i in order]
            eps = [s for _, s in found]
        if level > self._max_level:
            self._max_level = level
            self._entry = slot

    # -- search --------------------------------------------------------

    def _search_layer(self, query: np.ndarray, eps: list[int], ef: int, layer: int):
        """Greedy beam search on one layer; returns (sim, slot) pairs."""
        start = np.asarray(sorted(set(eps)), dtype=np.int64)
        sims = kernels.scores_for_rows(self._mat, start, query)
        visited = set(start.tolist())
        candidates = [(-float(s), int(p)) for s, p in zip(sims, start)]
        heapq.heapify(candidates)
        result = [(float(s), int(p)) for s, p in zip(sims, start)]
        heapq.heapify(result)
        while len(result) > ef:
            heapq.heappop(result)
        while candidates:
            neg_sim, cur = heapq.heappop(candidates)
            if len(result) >= ef and -neg_sim < result[0][0]:
                break
            fresh = [nb for nb in self._links[cur].get(layer, ()) if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            rows = np.asarray(fresh, dtype=np.int64)
            sims = kernels.scores_for_rows(self._mat, rows, query)
            for s, nb in zip(sims, fresh):
                s = float(s)
                if len(result) < ef or s > result[0][0]:
                    heapq.heappush(candidates, (-s, nb))
                    heapq.heappush(result, (s, nb))
                    if len(result) > ef:
                        heapq.heappop(result)
        return result

    def search(self, query, k: int, ef: int | None = None) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock.read():
            if len(self) == 0:
                raise EmptyIndex("index holds no live entries")
            vec = _normalize(query, self.dim)
            ef_eff = max(ef or self.params.ef_search, k) + len(self._dead)
            eps = [self._entry]
            for lc in range(self._max_level, 0, -1):
                eps = [s for _, s in self._search_layer(vec, eps, 1, lc)]
            found = self._search_layer(vec, eps, ef_eff, 0)
            hits = [
                (self._ids[slot], min(1.0, max(-1.0, sim)))
                for sim, slot in found
                if slot not in self._dead
            ]
            hits.sort(key=lambda h: (-h[1], h[0]))
            return hits[:k]

    def exact_search(self, query, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock.read():
            n = len(self._ids)
            if n == 0 or len(self) == 0:
                return []
            vec = _normalize(query, self.dim)
            sims = kernels.all_scores(np.ascontiguousarray(self._mat[:n]), vec)
            hits = [
                (self._ids[slot], min(1.0, max(-1.0, float(sims[slot]))))
                for slot in range(n)
                if slot not in self._dead
            ]
            hits.sort(key=lambda h: (-h[1], h[0]))
            return hits[:k]

    # -- removal -------------------------------------------------------

    def remove(self, entry_id: str) -> None:
        with self._lock.write():
            slot = self._slot.get(entry_id)
            if slot is None or slot in self._dead:
                raise UnknownId(entry_id)
            self._dead.add(slot)
            if self._dead and len(self._dead) / len(self._ids) > COMPACTION_DEAD_FRACTION:
                self._compact_unlocked()

    def _compact_unlocked(self):
        live = [
            (self._ids[s], np.array(self._mat[s]))
            for s in range(len(self._ids))
            if s not in self._dead
        ]
        self._rng = random.Random(self.params.seed)
        self._reset_storage()
        for entry_id, vec in live:
            self._insert_unlocked(entry_id, vec)
