import numpy as np
import pytest

from memloop.backends import HashEmbedder
from memloop.repository import (
    MemoryItem,
    MemoryKind,
    MemoryRepository,
    new_item_id,
    utc_now_rfc3339,
)

DIM = 48


@pytest.fixture
def embedder():
    return HashEmbedder(DIM)


@pytest.fixture(scope="session")
def embedder_session():
    return HashEmbedder(DIM)


@pytest.fixture
def mr(tmp_path):
    return MemoryRepository(tmp_path / "mr.log", dim=DIM)


def make_item(
    embedder,
    text: str,
    kind: MemoryKind = MemoryKind.TASK_MEMORY,
    success: bool = True,
    source_task: str | None = None,
    item_id: str | None = None,
) -> MemoryItem:
    return MemoryItem(
        id=item_id or new_item_id(),
        kind=kind,
        original_text=text + " :: full detail, actions, and verdicts",
        concise_text=text,
        brief_text=text[: max(1, len(text) // 2)],
        embedding=tuple(embedder.embed(text)),
        success=success,
        created_at=utc_now_rfc3339(),
        source_task=source_task,
    )


def random_unit_vectors(n: int, dim: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(n, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
