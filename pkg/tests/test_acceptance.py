"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import dataclasses
import random
import time

import numpy as np
import pytest

from memloop.backends import HashEmbedder
from memloop.context import Reference, assign_precision, compose
from memloop.engine import (
    TRANSITIONS,
    Backends,
    EngineConfig,
    EngineState,
    Event,
    run_task,
    step,
)
from memloop.errors import IllegalTransition
from memloop.executor import Workspace
from memloop.harness import (
    TaskDigest,
    metric_a_percentile,
    metric_exec_at_1,
    metric_pass_at_1,
    run_round,
)
from memloop.index import HnswIndex
from memloop.repository import MemoryKind, MemoryRepository, PrecisionLevel
from memloop.tokens import count_tokens

from .conftest import DIM, make_item, random_unit_vectors
from .suites import (
    loop_closure_suite,
    memory_sensitive_suite,
    primary_model,
    transfer_model,
)


def report(name: str):
    print(f"\n[ACCEPTANCE] {name}: PASS")


def experiment_config():
    return EngineConfig(max_revisions=0)


def fresh_setup(tmp_path, name, chat):
    mr = MemoryRepository(tmp_path / f"{name}.log", dim=DIM)
    return mr, Backends(chat=chat, embedder=HashEmbedder(DIM))


class TestAcceptance:
    def test_loop_closure(self, tmp_path):
        """Every End-pass session adds memory; MR size after round 1 equals
        the number of distinct passing tasks."""
        t0 = time.monotonic()
        suite = loop_closure_suite(n_pass=8, n_fail=4)
        assert len(suite) == 12
        mr, backends = fresh_setup(tmp_path, "loop", primary_model())
        r1 = run_round(suite, mr, backends, experiment_config())
        for digest in r1.per_task:
            if digest.status == "End" and digest.passed:
                assert len(digest.memory_ids) >= 1
        distinct_passing = len({d.task_id for d in r1.per_task if d.passed})
        assert distinct_passing == 8
        assert r1.mr_size_after == distinct_passing
        elapsed = time.monotonic() - t0
        assert elapsed < 10.0
        report(f"loop-closure (12 tasks, {elapsed:.2f}s)")

    def test_memory_recycling_improvement(self, tmp_path):
        """Group-B tasks succeed only with a group-A memory in context:
        round-2 pass@1 strictly exceeds round-1, deterministically."""
        t0 = time.monotonic()
        suite = memory_sensitive_suite(n_a=3, n_b=3)
        outcomes = []
        for trial in ("x", "y"):
            mr, backends = fresh_setup(tmp_path, f"recycle-{trial}", primary_model())
            r1 = run_round(suite, mr, backends, experiment_config(), 1)
            r2 = run_round(suite, mr, backends, experiment_config(), 2)
            assert r1.pass_at_1 < r2.pass_at_1
            outcomes.append((r1.pass_at_1, r2.pass_at_1))
        assert outcomes[0] == outcomes[1]  # deterministic
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0
        report(
            f"memory-recycling improvement (pass@1 {outcomes[0][0]:.2f} -> "
            f"{outcomes[0][1]:.2f}, {elapsed:.2f}s)"
        )

    def test_memory_transfer(self, tmp_path):
        """An exported MR lifts a fresh engine with a different scripted
        model; the archive round-trip is field-wise lossless."""
        # build a donor MR by running the experiment once
        suite = memory_sensitive_suite(n_a=3, n_b=3)
        donor_mr, donor_backends = fresh_setup(tmp_path, "donor", primary_model())
        run_round(suite, donor_mr, donor_backends, experiment_config())
        archive = tmp_path / "donor.mrx"
        assert donor_mr.export(archive) == donor_mr.count() > 0

        cold_mr, cold_backends = fresh_setup(tmp_path, "cold", transfer_model())
        cold = run_round(suite, cold_mr, cold_backends, experiment_config())
        warm_mr, warm_backends = fresh_setup(tmp_path, "warm", transfer_model())
        warm_mr.import_archive(archive)
        warm = run_round(suite, warm_mr, warm_backends, experiment_config())
        assert warm.pass_at_1 > cold.pass_at_1

        # lossless round-trip on 100 random items
        embedder = HashEmbedder(DIM)
        bulk = MemoryRepository(tmp_path / "bulk.log", dim=DIM)
        rng = random.Random(5)
        for i in range(100):
            kind = MemoryKind.TASK_MEMORY if rng.random() < 0.5 else MemoryKind.KNOWLEDGE
            bulk.insert(
                make_item(
                    embedder,
                    f"bulk transfer item {i} {'pad' * rng.randint(0, 6)}",
                    kind=kind,
                    success=rng.random() < 0.7,
                    source_task=f"{i:04x}" if rng.random() < 0.5 else None,
                )
            )
        bulk_archive = tmp_path / "bulk.mrx"
        assert bulk.export(bulk_archive) == 100
        clone = MemoryRepository(tmp_path / "clone.log", dim=DIM)
        assert clone.import_archive(bulk_archive) == 100
        assert clone.items() == bulk.items()  # field-wise equality, all 100
        report(
            f"memory transfer (cold pass@1 {cold.pass_at_1:.2f} < warm "
            f"{warm.pass_at_1:.2f}; 100-item round-trip lossless)"
        )

    def test_precision_sensitivity(self, tmp_path):
        """Brief-forced references never beat concise-forced ones on the
        memory-sensitive suite (the code word is absent from briefs)."""
        suite = memory_sensitive_suite(n_a=3, n_b=3)
        donor_mr, donor_backends = fresh_setup(tmp_path, "seed", primary_model())
        run_round(suite, donor_mr, donor_backends, experiment_config())
        archive = tmp_path / "seed.mrx"
        donor_mr.export(archive)

        rates = {}
        for level in (PrecisionLevel.BRIEF, PrecisionLevel.CONCISE):
            mr, backends = fresh_setup(tmp_path, f"prec-{level.value}", transfer_model())
            mr.import_archive(archive)
            config = dataclasses.replace(experiment_config(), force_level=level, write_memory=False)
            rates[level] = run_round(suite, mr, backends, config).pass_at_1
        assert rates[PrecisionLevel.BRIEF] <= rates[PrecisionLevel.CONCISE]
        report(
            f"precision sensitivity (brief {rates[PrecisionLevel.BRIEF]:.2f} <= "
            f"concise {rates[PrecisionLevel.CONCISE]:.2f})"
        )

    def test_retrieval_correctness(self, tmp_path):
        """mr_search equals brute-force top-k on small repositories;
        HNSW recall@10 >= 0.95 at defaults on 1000 random unit vectors."""
        embedder = HashEmbedder(DIM)
        rng = random.Random(11)
        for size in (1, 7, 50, 200):
            mr = MemoryRepository(tmp_path / f"r{size}.log", dim=DIM)
            for i in range(size):
                kind = MemoryKind.TASK_MEMORY if rng.random() < 0.6 else MemoryKind.KNOWLEDGE
                mr.insert(
                    make_item(
                        embedder,
                        f"retrieval item {i} {'word' * rng.randint(0, 5)} size {size}",
                        kind=kind,
                        success=rng.random() < 0.8,
                    )
                )
            for probe in range(10):
                query = embedder.embed(f"retrieval probe {probe}")
                for kind in MemoryKind:
                    for success_only in (False, True):
                        got = mr.search(query, kind, 5, success_only=success_only)
                        ranked = sorted(
                            (
                                (it, float(np.dot(query, it.embedding)))
                                for it in mr.items()
                                if it.kind is kind and (it.success or not success_only)
                            ),
                            key=lambda pair: (-pair[1], pair[0].id),
                        )
                        brute = ranked[:5]
                        assert len(got) == len(brute)
                        # kernel and BLAS dot products can differ in the
                        # last ulp, legitimately swapping near-ties: sims
                        # must agree positionally, ids wherever the rank
                        # is separated from its neighbours by > tolerance
                        tol = 1e-9
                        for pos, ((g_it, g_sim), (b_it, b_sim)) in enumerate(
                            zip(got, brute)
                        ):
                            assert abs(g_sim - b_sim) < tol
                            above = pos == 0 or ranked[pos - 1][1] - b_sim > tol
                            below = (
                                pos + 1 >= len(ranked)
                                or b_sim - ranked[pos + 1][1] > tol
                            )
                            if above and below:
                                assert g_it.id == b_it.id

        vecs = random_unit_vectors(1000, 32, seed=21)
        idx = HnswIndex(32)
        for i, v in enumerate(vecs):
            idx.insert(f"v{i:05d}", v)
        queries = random_unit_vectors(100, 32, seed=22)
        hits = 0
        for q in queries:
            approx = {i for i, _ in idx.search(q, 10)}
            exact = {i for i, _ in idx.exact_search(q, 10)}
            hits += len(approx & exact)
        recall = hits / 1000
        assert recall >= 0.95
        report(f"retrieval correctness (exact on <=200; recall@10 {recall:.3f})")

    def test_budget_safety(self, embedder_session):
        """1000 randomized compose calls stay within budget and follow the
        stated downgrade/drop order (checked by an independent simulation)."""
        rng = random.Random(99)
        violations = 0
        for trial in range(1000):
            n = rng.randint(0, 6)
            refs = [
                Reference(
                    item=make_item(
                        embedder_session,
                        f"budget ref {trial}-{i} " + "w" * rng.randint(0, 240),
                    ),
                    relevance=round(rng.uniform(-1, 1), 3),
                    level=PrecisionLevel.BRIEF,
                )
                for i in range(n)
            ]
            for r in refs:
                r.level = assign_precision(r.relevance)
            refs.sort(key=lambda r: (-r.relevance, r.item.id))
            base = "p" * rng.randint(0, 160)
            feedback = ("f" * rng.randint(1, 80)) if rng.random() < 0.5 else None
            floor = count_tokens(base) + count_tokens(feedback)
            budget = floor + rng.randint(0, 160)

            bundle = compose(base, refs, feedback, budget)
            if bundle.token_total > budget:
                violations += 1

            # independent oracle: simulate the stated loop over (id, level)
            sim = [[r.item, r.relevance, r.level] for r in refs]

            def total(state):
                cost = floor
                for item, relevance, level in state:
                    text = item.text_at(level)
                    label = "Key" if level is PrecisionLevel.ORIGINAL else "General"
                    rendered = (
                        f"### {label} Reference ({item.kind.value}, "
                        f"relevance={relevance:.2f})\n{text}\n"
                    )
                    cost += count_tokens(rendered)
                return cost

            while sim and total(sim) > budget:
                non_brief = [e for e in sim if e[2] is not PrecisionLevel.BRIEF]
                if non_brief:
                    victim = min(non_brief, key=lambda e: (e[1], e[0].id))
                    victim[2] = victim[2].downgrade()
                else:
                    victim = min(sim, key=lambda e: (e[1], e[0].id))
                    sim.remove(victim)
            assert [(r.item.id, r.level) for r in bundle.references] == [
                (item.id, level) for item, _, level in sim
            ]

            # argsort invariance of survivors
            surviving = [r.item.id for r in bundle.references]
            assert surviving == [r.item.id for r in refs if r.item.id in surviving]

        assert violations == 0
        report("budget safety (1000/1000 within budget, oracle-matched)")

    def test_metric_oracle_equivalence(self):
        """Metrics match brute-force recomputation on 100 random result
        sets; the nearest-rank examples hold exactly."""
        rng = random.Random(123)
        for _ in range(100):
            n = rng.randint(1, 40)
            digests = []
            for i in range(n):
                executed = rng.random() < 0.8
                passed = executed and rng.random() < 0.6
                ratio = round(rng.uniform(0.2, 4.0), 3)
                digests.append(TaskDigest(f"t{i}", "End" if passed else "Fail", executed, passed, ratio, []))
            assert metric_exec_at_1(digests) == sum(d.executed for d in digests) / n
            assert metric_pass_at_1(digests) == sum(d.passed for d in digests) / n
            ratios = [d.op_ratio for d in digests]
            for p in (50, 90):
                ordered = sorted(ratios)
                rank = -(-p * len(ordered) // 100)  # ceil without floats
                assert metric_a_percentile(ratios, p) == ordered[max(rank, 1) - 1]

        assert metric_a_percentile([1.0, 1.0, 1.5, 3.0], 50) == 1.0
        assert metric_a_percentile([1.0, 1.0, 1.5, 3.0], 90) == 3.0
        assert metric_a_percentile([1.0] * 7, 50) == 1.0 == metric_a_percentile([1.0] * 7, 90)
        report("metric oracle equivalence (100 random result sets)")

    def test_state_machine_totality(self, tmp_path):
        """The transition table is exactly the expected one; everything
        else raises; randomized sessions respect the proposal cap."""
        S, E = EngineState, Event
        expected = {
            (S.INIT, E.START): S.OBSERVING,
            (S.OBSERVING, E.REFERENCES_RETRIEVED): S.PROPOSING,
            (S.PROPOSING, E.PLAN_PARSED): S.EXECUTING,
            (S.PROPOSING, E.PLAN_REJECTED): S.ERROR_FEEDBACK,
            (S.PROPOSING, E.REVISION_CAP): S.FAIL,
            (S.EXECUTING, E.STEPS_OK): S.EVALUATING,
            (S.EXECUTING, E.EXECUTOR_ERROR): S.ERROR_FEEDBACK,
            (S.ERROR_FEEDBACK, E.FEEDBACK_COMPOSED): S.PROPOSING,
            (S.EVALUATING, E.EVAL_PASS): S.MEMORIZING,
            (S.EVALUATING, E.EVAL_FAIL): S.ERROR_FEEDBACK,
            (S.EVALUATING, E.EVAL_FAIL_FINAL): S.FAIL,
            (S.MEMORIZING, E.MEMORY_COMMITTED): S.END,
        }
        assert TRANSITIONS == expected
        for state in S:
            for event in E:
                if state in (S.END, S.FAIL) or (state, event) not in expected:
                    with pytest.raises(IllegalTransition):
                        step(state, event)
                else:
                    assert step(state, event) is expected[(state, event)]

        # randomized sessions terminate within the proposal cap
        from memloop.backends import FnChatBackend

        replies = [
            "```actions\nwrite_cell(addr=A1, value=5)\n```",
            "```actions\nwrite_cell(addr=A1, value=9)\n```",
            "```actions\nwrite_cell(addr=bad!, value=9)\n```",
            "no plan at all",
            "```actions\nwarp(addr=A1)\n```",
        ]
        rng = random.Random(31)
        config = EngineConfig(
            checker=[{"kind": "cell_equals", "args": {"addr": "A1", "value": 5}}],
            ground_truth_ops=1,
            max_revisions=3,
        )
        for trial in range(30):
            mr = MemoryRepository(tmp_path / f"sm{trial}.log", dim=DIM)
            chat = FnChatBackend(lambda _p: rng.choice(replies))
            backends = Backends(chat=chat, embedder=HashEmbedder(DIM))
            result = run_task("write five into A1", mr, backends, Workspace(), config)
            assert result.status in (S.END, S.FAIL)
            assert len(chat.calls) <= config.max_revisions + 1
        report("state-machine totality (exhaustive table + 30 random sessions)")
