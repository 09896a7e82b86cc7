import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entrole.corpus import AnnotatedCorpus, RoleLabel, build_document
from entrole.ranking import (
    VectorSet, average_precision_at_k, evaluate_rankings, map_at_k, rank_entities, sim_ga, write_comparison,
)
from entrole.representations import EntityRepresentation, RoleQuery


def brute_sim_ga(e, t):
    pool = np.vstack([e, t])
    n = len(pool)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += pool[i] @ pool[j] / (np.linalg.norm(pool[i]) * np.linalg.norm(pool[j]))
    return total / (n * (n - 1))


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestSimGA:
    def test_hand_values(self):
        assert sim_ga([[1.0, 0.0]], [[0.0, 1.0]]) == 0.0
        # pairs: (e1, e2) = 1, (e1, t) = (e2, t) = 0 -> 2 / 6 ordered pairs
        assert sim_ga([[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(1 / 3)
        assert sim_ga([[1.0, 0.0]], [[-1.0, 0.0]]) == -1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            e = unit_rows(rng, rng.integers(1, 8), 6)
            t = unit_rows(rng, rng.integers(1, 8), 6)
            assert abs(sim_ga(e, t) - brute_sim_ga(e, t)) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
    def test_symmetric_and_bounded(self, ne, nt, seed):
        rng = np.random.default_rng(seed)
        e, t = unit_rows(rng, ne, 5), unit_rows(rng, nt, 5)
        s = sim_ga(e, t)
        assert s == pytest.approx(sim_ga(t, e), abs=1e-12)
        assert -1 - 1e-12 <= s <= 1 + 1e-12
        assert s == pytest.approx(sim_ga(e[::-1], t), abs=1e-12)

    def test_vector_set_rejects_non_unit(self):
        with pytest.raises(ValueError):
            VectorSet([[2.0, 0.0]])
        with pytest.raises(ValueError):
            VectorSet(np.zeros((0, 3)))
        assert len(VectorSet([[1.0, 0.0], [0.0, 1.0]])) == 2


def naive_ap(relevance, k, r):
    """Independent AP@K: average of precision at each relevant rank within K."""
    precisions = []
    for rank in range(1, min(k, len(relevance)) + 1):
        if relevance[rank - 1]:
            precisions.append(sum(relevance[:rank]) / rank)
    return sum(precisions) / min(k, r)


class TestAveragePrecision:
    def test_hand_values(self):
        assert average_precision_at_k([1, 0, 1], 3) == pytest.approx((1 + 2 / 3) / 2)
        assert average_precision_at_k([0, 1], 1) == 0.0
        assert average_precision_at_k([0, 1], 2) == 0.5
        # R counts relevant entities beyond the list
        assert average_precision_at_k([1, 0], 2, n_relevant=3) == 0.5

    def test_perfect_ranking(self):
        for r in range(1, 6):
            rel = [1] * r + [0] * 4
            for k in range(1, 10):
                assert average_precision_at_k(rel, k) == 1.0

    def test_no_relevant(self):
        with pytest.raises(ValueError):
            average_precision_at_k([0, 0], 2)

    def test_matches_naive(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            n = int(rng.integers(1, 12))
            rel = rng.random(n) < 0.3
            if not rel.any():
                rel[rng.integers(n)] = True
            k = int(rng.integers(1, 15))
            assert average_precision_at_k(list(rel), k) == naive_ap(list(rel), k, int(rel.sum()))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=15).filter(any), st.integers(1, 20))
    def test_bounded(self, rel, k):
        assert 0.0 <= average_precision_at_k(rel, k) <= 1.0


def _doc_and_reps():
    sents = [["A", "x"], ["B", "y"], ["A", "z"], ["C", "w"]]
    mentions = [("a", 0, 0, 0, RoleLabel.PER_Others), ("b", 1, 0, 0, RoleLabel.PER_Victim),
                ("a", 2, 0, 0, RoleLabel.PER_Victim), ("c", 3, 0, 0, RoleLabel.PER_Accused)]
    doc = build_document("d", sents, mentions)
    vecs = {0: [0.0, 1.0], 1: [np.sqrt(0.5), np.sqrt(0.5)], 2: [1.0, 0.0], 3: None}
    reps = {}
    for i, m in enumerate(doc.mentions):
        v = vecs[i]
        reps[m] = None if v is None else EntityRepresentation(m, "centroid", np.array([v]))
    return doc, reps


class TestRankEntities:
    def test_best_mention_and_relevance(self):
        doc, reps = _doc_and_reps()
        q = RoleQuery(RoleLabel.PER_Victim, "TV", np.array([[1.0, 0.0]]))
        rl = rank_entities(reps, q, doc)
        assert [it.entity_key for it in rl.items] == ["a", "b", "c"]
        assert rl.items[0].mention.sentence == 2  # the better of a's two mentions
        assert rl.relevance == [True, True, False]
        assert rl.n_relevant == 2
        assert rl.items[2].score == -math.inf and not rl.items[2].rankable

    def test_ties_keep_document_order(self):
        doc, _ = _doc_and_reps()
        same = {m: EntityRepresentation(m, "centroid", np.array([[1.0, 0.0]])) for m in doc.mentions}
        q = RoleQuery(RoleLabel.PER_Accused, "TV", np.array([[1.0, 0.0]]))
        assert [it.entity_key for it in rank_entities(same, q, doc).items] == ["a", "b", "c"]


class TestEvaluate:
    def test_exclusion_and_curve(self, tmp_path):
        doc, reps = _doc_and_reps()
        lists = [rank_entities(reps, RoleQuery(role, "TV", np.array([[1.0, 0.0]])), doc)
                 for role in (RoleLabel.PER_Victim, RoleLabel.PER_Accused, RoleLabel.LOC_Event)]
        rep = evaluate_rankings(lists, kmax=3, method="m")
        assert rep.n_queries == 2 and rep.n_excluded == 1
        # PER_Victim: [1,1,0] -> 1 at every K; PER_Accused: [0,0,1] -> 0, 0, 1/3
        np.testing.assert_allclose(rep.curve, [0.5, 0.5, (1 + 1 / 3) / 2])
        assert rep.map_at(1) == map_at_k(lists, 1)
        rep.write(tmp_path, "m")
        with open(tmp_path / "m_curve.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["K", "mAP"] and len(rows) == 4
        write_comparison([rep, rep], tmp_path / "cmp.csv", 3)
        with open(tmp_path / "cmp.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["Method", "mAP@1", "mAP@2", "mAP@3"] and len(rows) == 3
