"""Seed sets, uncertainty scores, batch selection, and the full loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curare.index import build_index
from curare.learner import (
    CurationLoop,
    LearnerError,
    LoopAborted,
    LoopConfig,
    build_seed_set,
    drive_loop,
    oracle_labeler,
    run_loop,
    score_uncertainty,
    select_batch,
)
from curare.linear import TrainConfig
from curare.store import EmbeddingSet, Label, LabelSource, make_meta

from conftest import random_set


def two_cluster_set(per=120, dim=6, gap=12.0, seed=0):
    """Separable positive (label 1) and negative (label 0) blobs."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(loc=gap / 2, scale=0.5, size=(per, dim))
    neg = rng.normal(loc=-gap / 2, scale=0.5, size=(per, dim))
    vectors = np.vstack([pos, neg]).astype(np.float32)
    labels = [1] * per + [0] * per
    meta = make_meta([f"it-{i:04d}" for i in range(2 * per)], true_labels=labels)
    return EmbeddingSet(vectors, meta)


def fast_train() -> TrainConfig:
    return TrainConfig(learning_rate=0.5, epochs=40, batch_size=256, l2=1e-4, seed=0)


class TestScoreUncertainty:
    def test_uniform_row_maximizes_everything(self):
        p = np.array([[0.5, 0.5]])
        assert score_uncertainty(p, "least_confidence")[0] == pytest.approx(0.5, abs=1e-12)
        assert score_uncertainty(p, "margin")[0] == pytest.approx(1.0, abs=1e-12)
        assert score_uncertainty(p, "entropy")[0] == pytest.approx(math.log(2), abs=1e-9)

    def test_certain_row_scores_zero(self):
        p = np.array([[1.0, 0.0]])
        for strategy in ("least_confidence", "margin", "entropy"):
            assert score_uncertainty(p, strategy)[0] == 0.0

    def test_point_nine(self):
        p = np.array([[0.9, 0.1]])
        assert score_uncertainty(p, "least_confidence")[0] == pytest.approx(0.1)
        assert score_uncertainty(p, "margin")[0] == pytest.approx(0.2)
        expected_entropy = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
        assert score_uncertainty(p, "entropy")[0] == pytest.approx(expected_entropy, abs=1e-12)
        assert expected_entropy == pytest.approx(0.3251, abs=5e-5)

    def test_malformed_rows_rejected(self):
        with pytest.raises(LearnerError):
            score_uncertainty(np.array([[0.7, 0.2]]), "entropy")

    def test_random_strategy_seeded(self):
        p = np.tile([0.5, 0.5], (10, 1))
        a = score_uncertainty(p, "random", np.random.default_rng(3))
        b = score_uncertainty(p, "random", np.random.default_rng(3))
        assert np.array_equal(a, b)
        with pytest.raises(LearnerError):
            score_uncertainty(p, "random")

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_swap_invariance(self, p0):
        row = np.array([[p0, 1.0 - p0]])
        flipped = row[:, ::-1]
        for strategy in ("least_confidence", "margin", "entropy"):
            assert score_uncertainty(row, strategy)[0] == pytest.approx(
                score_uncertainty(flipped, strategy)[0], abs=1e-12
            )

    def test_maximum_at_uniform_minimum_at_degenerate(self):
        grid = np.linspace(0.0, 1.0, 21)
        probs = np.stack([grid, 1.0 - grid], axis=1)
        for strategy in ("least_confidence", "margin", "entropy"):
            scores = score_uncertainty(probs, strategy)
            assert np.argmax(scores) == 10  # p = (0.5, 0.5)
            assert scores[0] == pytest.approx(0.0, abs=1e-12)
            assert scores[-1] == pytest.approx(0.0, abs=1e-12)


class TestSelectBatch:
    def test_none_is_top_k_by_score(self):
        scores = np.linspace(1.0, 0.1, 10)  # strictly decreasing by row
        vecs = np.zeros((10, 2))
        assert select_batch(scores, vecs, "none", 4, seed=0) == [0, 1, 2, 3]

    def test_none_matches_least_confidence_sort_oracle(self):
        rng = np.random.default_rng(5)
        probs = rng.dirichlet([1, 1], size=50)
        scores = score_uncertainty(probs, "least_confidence")
        picked = select_batch(scores, rng.normal(size=(50, 3)), "none", 12, seed=0)
        oracle = np.lexsort((np.arange(50), -(1.0 - probs.max(axis=1))))[:12]
        assert picked == oracle.tolist()

    def test_tie_break_ascending_row_id(self):
        scores = np.array([0.5, 0.9, 0.9, 0.1])
        assert select_batch(scores, np.zeros((4, 2)), "none", 2, seed=0) == [1, 2]

    def test_proximity_suppresses_duplicates(self):
        # rows 0 and 1 are identical points tied at the top score
        vecs = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
        scores = np.array([1.0, 1.0, 0.4, 0.3])
        picked = select_batch(scores, vecs, "proximity", 2, seed=0, sigma=1.0)
        assert picked[0] == 0
        assert 1 not in picked  # the duplicate is fully damped

    def test_cluster_takes_one_per_blob(self):
        rng = np.random.default_rng(8)
        blobs = [rng.normal(loc=c * 30, scale=0.2, size=(15, 2)) for c in range(4)]
        vecs = np.vstack(blobs)
        scores = rng.uniform(0.1, 0.9, size=60)
        picked = select_batch(scores, vecs, "cluster", 4, seed=1)
        assert len(picked) == 4
        assert sorted(p // 15 for p in picked) == [0, 1, 2, 3]

    def test_gaussian_deterministic_and_distinct(self):
        rng = np.random.default_rng(9)
        scores = rng.uniform(size=40)
        vecs = rng.normal(size=(40, 3))
        a = select_batch(scores, vecs, "gaussian", 10, seed=77)
        b = select_batch(scores, vecs, "gaussian", 10, seed=77)
        assert a == b
        assert len(set(a)) == 10

    def test_batch_larger_than_pool_rejected(self):
        with pytest.raises(LearnerError):
            select_batch(np.ones(3), np.zeros((3, 2)), "none", 4, seed=0)

    def test_row_ids_passed_through(self):
        scores = np.array([0.1, 0.9])
        picked = select_batch(scores, np.zeros((2, 2)), "none", 1, seed=0,
                              row_ids=np.array([17, 99]))
        assert picked == [99]


class TestBuildSeedSet:
    def test_default_protocol_size(self):
        es = random_set(600, 8, seed=1)
        idx = build_index(es, mode="exact")
        cfg = LoopConfig(train=fast_train())
        requests = build_seed_set(idx, es.meta[0].item_id, cfg)
        assert len(requests) == 96
        assert len(set(requests)) == 96
        assert es.meta[0].item_id not in requests

    def test_neighbors_only_when_no_randoms(self):
        es = random_set(50, 4, seed=2)
        idx = build_index(es, mode="exact")
        cfg = LoopConfig(seed_nn=5, seed_random=0, train=fast_train())
        requests = build_seed_set(idx, es.meta[7].item_id, cfg)
        assert len(requests) == 5
        assert es.meta[7].item_id not in requests

    def test_random_draw_never_collides_with_neighbors(self):
        es = random_set(40, 4, seed=3)
        idx = build_index(es, mode="exact")
        for seed in range(10):
            cfg = LoopConfig(seed_nn=20, seed_random=19, seed=seed, train=fast_train())
            requests = build_seed_set(idx, es.meta[0].item_id, cfg)
            assert len(requests) == 39
            assert len(set(requests)) == 39

    def test_unknown_starter(self):
        es = random_set(10, 4, seed=4)
        idx = build_index(es, mode="exact")
        with pytest.raises(LearnerError, match="starter"):
            build_seed_set(idx, "missing", LoopConfig(train=fast_train()))

    def test_seed_nn_must_be_smaller_than_set(self):
        es = random_set(10, 4, seed=5)
        idx = build_index(es, mode="exact")
        with pytest.raises(LearnerError, match="seed_nn"):
            build_seed_set(idx, es.meta[0].item_id,
                           LoopConfig(seed_nn=10, seed_random=0, train=fast_train()))


class TestLoop:
    def _loop_cfg(self, **kw):
        base = dict(seed_nn=16, seed_random=8, batch_size=16,
                    label_budget_fraction=0.05, seed=3, train=fast_train(),
                    verify_cap=0)
        base.update(kw)
        return LoopConfig(**base)

    def test_budget_arithmetic(self):
        es = two_cluster_set(per=1000, dim=4, seed=1)  # N = 2000
        idx = build_index(es, mode="exact")
        cfg = LoopConfig(train=fast_train(), seed=1, verify_cap=0)
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        drive_loop(loop, oracle_labeler(es, 1))
        assert loop.seed_labels == 96
        assert loop.loop_labels == math.ceil(0.05 * 2000) == 100
        assert loop.phase == "done"

    def test_separable_oracle_curates_positive_cluster_exactly(self):
        es = two_cluster_set(per=150, dim=6, seed=2)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg()
        _, curated, _ = run_loop(es, idx, es.meta[0].item_id,
                                 oracle_labeler(es, 1), cfg)
        positive_ids = {m.item_id for m in es.meta if m.true_label == 1}
        assert set(curated.ids()) == positive_ids

    def test_no_item_requested_twice_and_budget_respected(self):
        es = two_cluster_set(per=200, dim=4, gap=3.0, seed=3)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(verify_cap=25)
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        requested: list[str] = []
        seen_batches = set()

        def labeler(item_id: str) -> Label:
            requested.append(item_id)
            return Label.RELEVANT if es.meta[es.row_of(item_id)].true_label == 1 else Label.NOT_RELEVANT

        drive_loop(loop, labeler)
        assert len(requested) == len(set(requested))  # no item asked twice
        budget = math.ceil(0.05 * es.count)
        assert loop.seed_labels + loop.loop_labels <= budget + cfg.seed_nn + cfg.seed_random
        assert loop.verify_labels <= cfg.verify_cap

    def test_deterministic_for_seed_and_labeler(self):
        es = two_cluster_set(per=100, dim=4, gap=4.0, seed=4)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(uncertainty="entropy", seed=9)
        clock = lambda: 0
        m1, c1, h1 = run_loop(es, idx, es.meta[3].item_id, oracle_labeler(es, 1), cfg, clock=clock)
        m2, c2, h2 = run_loop(es, idx, es.meta[3].item_id, oracle_labeler(es, 1), cfg, clock=clock)
        assert c1.items == c2.items
        assert h1 == h2
        assert np.array_equal(m1.weights, m2.weights)

    def test_history_lines_and_budget_convergence(self):
        es = two_cluster_set(per=100, dim=4, seed=5)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(batch_size=7)
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        drive_loop(loop, oracle_labeler(es, 1))
        assert loop.history[0].labels_used == 24  # after the seed batch
        assert all(h.f1_val is not None for h in loop.history)  # truth available
        line = loop.history[0].as_line()
        assert line.split("\t")[0] == "1"
        # final batch truncated so loop labels stop exactly at the budget
        assert loop.loop_labels == math.ceil(0.05 * es.count)

    def test_verification_prunes_rejected_items(self):
        es = two_cluster_set(per=80, dim=4, gap=2.0, seed=6)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(verify_cap=10)
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)

        rejected: list[str] = []

        def spiteful(item_id: str) -> Label:
            # answer truthfully during seed/loop, reject everything at verification
            if loop.phase == "verifying":
                rejected.append(item_id)
                return Label.NOT_RELEVANT
            truth = es.meta[es.row_of(item_id)].true_label
            return Label.RELEVANT if truth == 1 else Label.NOT_RELEVANT

        _, curated, _ = drive_loop(loop, spiteful)
        assert rejected  # verification actually happened
        assert not (set(curated.ids()) & set(rejected))
        assert loop.verify_labels == len(rejected) <= 10

    def test_curated_excludes_human_rejections_regardless_of_score(self):
        es = two_cluster_set(per=60, dim=4, gap=8.0, seed=7)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(seed_nn=8, seed_random=8, batch_size=8)
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        lied = {"item": None}  # reject the first true positive we are asked about

        def labeler(item_id: str) -> Label:
            truth = es.meta[es.row_of(item_id)].true_label
            if truth == 1 and lied["item"] is None:
                lied["item"] = item_id
            if item_id == lied["item"]:
                return Label.NOT_RELEVANT
            return Label.RELEVANT if truth == 1 else Label.NOT_RELEVANT

        _, curated, _ = drive_loop(loop, labeler)
        assert lied["item"] is not None
        assert lied["item"] not in curated.ids()  # human "no" beats any score

    def test_abort_persists_resumable_state(self, tmp_path):
        es = two_cluster_set(per=100, dim=4, seed=8)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(seed=5)
        state = tmp_path / "run"
        calls = {"n": 0}
        oracle = oracle_labeler(es, 1)

        def flaky(item_id: str) -> Label:
            calls["n"] += 1
            if calls["n"] == 28:  # dies inside the first loop batch (24 seed items)
                raise RuntimeError("labeler went away")
            return oracle(item_id)

        with pytest.raises(LoopAborted):
            run_loop(es, idx, es.meta[0].item_id, flaky, cfg, state_dir=state)
        assert (state / "session.json").exists()
        assert (state / "labels.tsv").exists()

        resumed = CurationLoop.resume(es, idx, state)
        already = {r.item_id for r in resumed.label_store if r.source != LabelSource.WEAK}
        assert not (set(resumed.pending_requests()) & already)  # nothing re-asked
        _, curated_resumed, _ = drive_loop(resumed, oracle)

        clean = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        _, curated_clean, _ = drive_loop(clean, oracle)
        assert curated_resumed.items == curated_clean.items

    def test_weak_labels_appended_for_unverified_curated(self):
        es = two_cluster_set(per=80, dim=4, seed=9)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg()
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        drive_loop(loop, oracle_labeler(es, 1))
        weak = [r for r in loop.label_store if r.source == LabelSource.WEAK]
        human_ids = {r.item_id for r in loop.label_store if r.source != LabelSource.WEAK}
        assert weak
        assert all(r.label == Label.RELEVANT for r in weak)
        assert not ({r.item_id for r in weak} & human_ids)

    def test_coreset_subsampled_selection_stays_valid(self):
        es = two_cluster_set(per=150, dim=4, seed=10)
        idx = build_index(es, mode="exact")
        cfg = self._loop_cfg(coreset_threshold=50)  # force the subsample path
        loop = CurationLoop(es, idx, es.meta[0].item_id, cfg)
        drive_loop(loop, oracle_labeler(es, 1))
        assert loop.phase == "done"
        human = [r.item_id for r in loop.label_store if r.source != LabelSource.WEAK]
        assert len(human) == len(set(human))
