import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memloop.backends import HashEmbedder
from memloop.errors import (
    DimensionMismatch,
    InvariantViolation,
    MalformedArchive,
    UnknownId,
)
from memloop.repository import MemoryKind, MemoryRepository, PrecisionLevel

from .conftest import DIM, make_item


class TestPrecisionLevel:
    def test_downgrade_chain(self):
        assert PrecisionLevel.ORIGINAL.downgrade() is PrecisionLevel.CONCISE
        assert PrecisionLevel.CONCISE.downgrade() is PrecisionLevel.BRIEF
        assert PrecisionLevel.BRIEF.downgrade() is PrecisionLevel.BRIEF

    def test_total_order(self):
        ranks = [PrecisionLevel.BRIEF.rank, PrecisionLevel.CONCISE.rank, PrecisionLevel.ORIGINAL.rank]
        assert ranks == sorted(ranks)


class TestInsertGet:
    def test_round_trip(self, mr, embedder):
        item = make_item(embedder, "sort the revenue column descending")
        assert mr.insert(item) == item.id
        assert mr.get(item.id) == item

    def test_empty_concise_rejected(self, mr, embedder):
        item = dataclasses.replace(make_item(embedder, "x" * 40), concise_text="")
        with pytest.raises(InvariantViolation):
            mr.insert(item)

    def test_token_ordering_enforced(self, mr, embedder):
        item = dataclasses.replace(make_item(embedder, "short"), brief_text="b" * 400)
        with pytest.raises(InvariantViolation):
            mr.insert(item)

    def test_wrong_dim_rejected(self, mr):
        other = HashEmbedder(DIM * 2)
        with pytest.raises(DimensionMismatch):
            mr.insert(make_item(other, "wrong dimension item"))

    def test_unknown_id(self, mr):
        with pytest.raises(UnknownId):
            mr.get("deadbeef")

    def test_durability_across_reopen(self, tmp_path, embedder):
        path = tmp_path / "mr.log"
        mr = MemoryRepository(path, dim=DIM)
        for i in range(50):
            mr.insert(make_item(embedder, f"durable item number {i}"))
        reopened = MemoryRepository(path, dim=DIM)
        assert reopened.count() == 50
        for item in mr.items():
            assert reopened.get(item.id) == item


class TestSearch:
    def test_up_to_k_honored(self, mr, embedder):
        mr.insert(make_item(embedder, "first task about charts"))
        mr.insert(make_item(embedder, "second task about charts"))
        hits = mr.search(embedder.embed("task about charts"), MemoryKind.TASK_MEMORY, 3)
        assert len(hits) == 2

    def test_success_only_filter(self, mr, embedder):
        mr.insert(make_item(embedder, "same text either way", success=True))
        mr.insert(make_item(embedder, "same text either way!", success=False))
        hits = mr.search(
            embedder.embed("same text either way"), MemoryKind.TASK_MEMORY, 5, success_only=True
        )
        assert all(item.success for item, _ in hits)
        assert len(hits) == 1

    def test_kind_filter_matches_brute_force(self, mr, embedder):
        for i in range(10):
            kind = MemoryKind.TASK_MEMORY if i % 2 else MemoryKind.KNOWLEDGE
            mr.insert(make_item(embedder, f"entry number {i} about formatting", kind=kind))
        query = embedder.embed("entry about formatting")
        hits = mr.search(query, MemoryKind.TASK_MEMORY, 3, success_only=False)

        def cosine(a, b):
            num = sum(x * y for x, y in zip(a, b))
            da = sum(x * x for x in a) ** 0.5
            db = sum(x * x for x in b) ** 0.5
            return num / (da * db)

        brute = sorted(
            (
                (it, cosine(query, it.embedding))
                for it in mr.items()
                if it.kind is MemoryKind.TASK_MEMORY
            ),
            key=lambda pair: (-pair[1], pair[0].id),
        )[:3]
        assert [it.id for it, _ in hits] == [it.id for it, _ in brute]
        for (_, got), (_, want) in zip(hits, brute):
            assert got == pytest.approx(want, abs=1e-9)

    def test_exclude_ids(self, mr, embedder):
        a = mr.insert(make_item(embedder, "excluded item text"))
        hits = mr.search(
            embedder.embed("excluded item text"),
            MemoryKind.TASK_MEMORY,
            3,
            exclude_ids={a},
        )
        assert hits == []

    def test_empty_repository(self, mr, embedder):
        assert mr.search(embedder.embed("whatever"), MemoryKind.KNOWLEDGE, 3) == []


class TestForget:
    def test_forget_all(self, mr, embedder):
        ids = [mr.insert(make_item(embedder, f"forgettable {i}")) for i in range(5)]
        assert mr.forget(ids) == 5
        assert mr.count() == 0

    def test_unknown_counted_zero(self, mr, embedder):
        known = mr.insert(make_item(embedder, "known item text"))
        assert mr.forget([known, "notthere"]) == 1

    def test_forgotten_never_returned(self, mr, embedder):
        item = make_item(embedder, "text to be forgotten")
        mr.insert(item)
        mr.forget([item.id])
        with pytest.raises(UnknownId):
            mr.get(item.id)
        hits = mr.search(embedder.embed("text to be forgotten"), MemoryKind.TASK_MEMORY, 3)
        assert item.id not in [it.id for it, _ in hits]

    def test_forget_survives_reopen(self, tmp_path, embedder):
        path = tmp_path / "mr.log"
        mr = MemoryRepository(path, dim=DIM)
        keep = mr.insert(make_item(embedder, "item that stays"))
        gone = mr.insert(make_item(embedder, "item that goes"))
        mr.forget([gone])
        reopened = MemoryRepository(path, dim=DIM)
        assert reopened.count() == 1
        assert reopened.get(keep)


class TestTransfer:
    def test_empty_export(self, mr, tmp_path):
        dest = tmp_path / "out.mrx"
        assert mr.export(dest) == 0
        assert dest.read_text() == ""

    def test_export_import_lossless(self, mr, embedder, tmp_path):
        for i in range(10):
            mr.insert(make_item(embedder, f"transferable item {i}", success=bool(i % 2)))
        dest = tmp_path / "out.mrx"
        assert mr.export(dest) == 10
        fresh = MemoryRepository(tmp_path / "fresh.log", dim=DIM)
        assert fresh.import_archive(dest) == 10
        assert fresh.items() == mr.items()
        query = embedder.embed("transferable item")
        assert mr.search(query, MemoryKind.TASK_MEMORY, 3, success_only=False) == fresh.search(
            query, MemoryKind.TASK_MEMORY, 3, success_only=False
        )

    def test_export_deterministic(self, mr, embedder, tmp_path):
        for i in range(5):
            mr.insert(make_item(embedder, f"deterministic {i}"))
        a, b = tmp_path / "a.mrx", tmp_path / "b.mrx"
        mr.export(a)
        mr.export(b)
        assert a.read_bytes() == b.read_bytes()

    def test_reimport_skip_duplicates(self, mr, embedder, tmp_path):
        mr.insert(make_item(embedder, "duplicated on reimport"))
        dest = tmp_path / "out.mrx"
        mr.export(dest)
        assert mr.import_archive(dest, policy="skip_duplicates") == 0

    def test_import_overwrite(self, mr, embedder, tmp_path):
        item = make_item(embedder, "original rendition of the item")
        mr.insert(item)
        dest = tmp_path / "out.mrx"
        mr.export(dest)
        mr.forget([item.id])
        mr.insert(dataclasses.replace(make_item(embedder, "changed rendition text"), id=item.id))
        assert mr.import_archive(dest, policy="overwrite") == 1
        assert mr.get(item.id).concise_text == item.concise_text

    def test_dimension_mismatch_on_import(self, tmp_path, embedder):
        mr = MemoryRepository(tmp_path / "mr.log", dim=DIM)
        mr.insert(make_item(embedder, "dim-checked item"))
        dest = tmp_path / "out.mrx"
        mr.export(dest)
        small = MemoryRepository(tmp_path / "small.log", dim=8)
        with pytest.raises(DimensionMismatch):
            small.import_archive(dest)

    def test_malformed_archive(self, mr, tmp_path):
        bad = tmp_path / "bad.mrx"
        bad.write_text("this is not a record\n")
        with pytest.raises(MalformedArchive):
            mr.import_archive(bad)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=8, max_size=30), st.booleans()), min_size=1, max_size=8))
def test_success_only_never_returns_failures(tmp_path_factory, entries):
    embedder = HashEmbedder(DIM)
    mr = MemoryRepository(tmp_path_factory.mktemp("mr") / "mr.log", dim=DIM)
    for text, success in entries:
        try:
            mr.insert(make_item(embedder, text, success=success))
        except InvariantViolation:
            continue  # extreme texts can break the token-ordering invariant
    hits = mr.search(embedder.embed("probe query"), MemoryKind.TASK_MEMORY, 8, success_only=True)
    assert all(item.success for item, _ in hits)
