import csv
import itertools

import numpy as np
import pytest

from entrole.taggers import (
    FeatureTemplate, OptimizerConfig, crf_decode, crf_train, forward_backward, hmm_train, objective,
    role_precision_report, tag_sequences, viterbi, viterbi_decode, write_tagger_table,
)
from entrole.taggers.crf import sequence_score


def brute(start, trans, unary):
    """(log Z, best path, best score) by enumerating every tag sequence."""
    n, T = unary.shape
    scores = {}
    for y in itertools.product(range(T), repeat=n):
        scores[y] = sequence_score(start, trans, unary, y)
    vals = np.array(list(scores.values()))
    m = vals.max()
    log_z = m + np.log(np.exp(vals - m).sum())
    best = max(scores, key=lambda y: (scores[y], [-t for t in y]))
    return log_z, list(best), scores[best]


def random_instances(n_models, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_models):
        T = int(rng.integers(1, 5))
        n = int(rng.integers(1, 7))
        yield rng.normal(size=T), rng.normal(size=(T, T)), rng.normal(size=(n, T))


class TestCrfInference:
    def test_partition_and_viterbi_brute_force(self):
        for start, trans, unary in random_instances(200):
            log_z, best, best_score = brute(start, trans, unary)
            assert abs(forward_backward(start, trans, unary)[0] - log_z) < 1e-8
            path, score = viterbi(start, trans, unary)
            assert path == best
            assert score == pytest.approx(best_score, abs=1e-12)

    def test_marginals_sum_to_one(self):
        for start, trans, unary in random_instances(20, seed=3):
            log_z, a, b = forward_backward(start, trans, unary)
            np.testing.assert_allclose(np.exp(a + b - log_z).sum(axis=1), 1.0, atol=1e-10)


def _tiny_data():
    sents = [
        [("Ram", "B-PER_Victim"), ("was", "O"), ("killed", "O")],
        [("LET", "B-ORG_Accused"), ("claimed", "O"), ("it", "O")],
        [("Ram", "B-PER_Accused"), ("Kumar", "I-PER_Accused"), ("arrested", "O")],
    ]
    return sents


class TestCrfTraining:
    def test_gradient_finite_difference(self):
        tags = ["O", "B-PER_Victim", "B-ORG_Accused", "B-PER_Accused", "I-PER_Accused"]
        model = crf_train(_tiny_data(), l2=0.1, optimizer=OptimizerConfig(epochs=2), tags=tags)
        rng = np.random.default_rng(0)
        model.set_flat(rng.normal(scale=0.3, size=model.n_params))
        tag_id = {t: i for i, t in enumerate(model.tags)}
        data = [(model.feature_ids([w for w, _ in s]), np.array([tag_id[t] for _, t in s])) for s in _tiny_data()]
        theta = model.flat()
        _, grad = objective(model, data)
        h = 1e-5
        idx = rng.choice(len(theta), size=60, replace=False)
        for i in idx:
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            model.set_flat(tp)
            fp = objective(model, data)[0]
            model.set_flat(tm)
            fm = objective(model, data)[0]
            fd = (fp - fm) / (2 * h)
            assert abs(fd - grad[i]) / max(1e-8, abs(fd) + abs(grad[i])) < 1e-4

    def test_memorizes(self):
        model = crf_train(_tiny_data(), l2=1e-4, optimizer=OptimizerConfig(epochs=30, learning_rate=0.5))
        for s in _tiny_data():
            assert crf_decode(model, [w for w, _ in s]) == [t for _, t in s]
        assert model.history[-1] < model.history[0]

    def test_lbfgs(self):
        model = crf_train(_tiny_data(), l2=1e-3, optimizer=OptimizerConfig(method="lbfgs", max_iter=100))
        for s in _tiny_data():
            assert crf_decode(model, [w for w, _ in s]) == [t for _, t in s]

    def test_deterministic(self):
        a = crf_train(_tiny_data(), optimizer=OptimizerConfig(epochs=3))
        b = crf_train(_tiny_data(), optimizer=OptimizerConfig(epochs=3))
        assert np.array_equal(a.flat(), b.flat())

    def test_features(self):
        f = FeatureTemplate().extract(["LET", "claimed"])
        assert "w=let" in f[0] and "caps" in f[0] and "-1:BOS" in f[0] and "+1:w=claimed" in f[0]
        assert "+1:EOS" in f[1] and "bias" in f[1]

    def test_empty(self):
        with pytest.raises(ValueError):
            crf_train([])


class TestHmm:
    def test_viterbi_brute_force(self):
        for start, trans, obs in random_instances(200, seed=5):
            _, best, _ = brute(start, trans, obs)
            assert viterbi(start, trans, obs)[0] == best

    def test_distributions_normalize(self):
        m = hmm_train(_tiny_data(), alpha_t=0.5, alpha_e=0.1)
        np.testing.assert_allclose(np.exp(m.log_start).sum(), 1.0, atol=1e-9)
        np.testing.assert_allclose(np.exp(m.log_trans).sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(np.exp(m.log_emit).sum(axis=1), 1.0, atol=1e-9)

    def test_counts(self):
        m = hmm_train(_tiny_data(), alpha_t=0.0, alpha_e=0.0)
        o = m.tags.index("O")
        # "O" emits was, killed, claimed, it, arrested once each
        assert np.exp(m.log_emit[o, m.vocab["killed"]]) == pytest.approx(1 / 5)
        assert np.exp(m.log_trans[o, o]) == pytest.approx(1.0)
        assert np.exp(m.log_start[m.tags.index("B-PER_Victim")]) == pytest.approx(1 / 3)

    def test_memorization(self):
        data = [s for s in _tiny_data() if s[0][0] != "Ram" or s[1][0] == "Kumar"]
        m = hmm_train(data, alpha_t=0.0, alpha_e=0.0)
        for s in data:
            assert viterbi_decode(m, [w for w, _ in s]) == [t for _, t in s]

    def test_unknown_word(self):
        m = hmm_train(_tiny_data())
        assert len(viterbi_decode(m, ["zzz", "was"])) == 2


class TestEvaluation:
    def test_precision(self):
        gold = [["B-PER_Victim", "I-PER_Victim", "O", "B-LOC_Event"]]
        pred = [["B-PER_Victim", "O", "O", "B-LOC_Event"]]
        rep = role_precision_report(gold, pred, "x")
        assert rep.roles["PER_Victim"].precision == 0.0  # boundary mismatch
        assert rep.roles["LOC_Event"].precision == 1.0
        assert rep.roles["ORG_Victim"].precision is None
        assert rep.macro_precision == 0.5
        assert rep.micro_precision == 0.5

    def test_repairs_counted(self):
        rep = role_precision_report([["B-LOC_Event"]], [["I-LOC_Event"]])
        assert rep.repairs == 1
        assert rep.roles["LOC_Event"].precision == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            role_precision_report([["O"]], [["O", "O"]])

    def test_table(self, tmp_path):
        rep = role_precision_report([["B-LOC_Event"]], [["B-LOC_Event"]], "HMM")
        write_tagger_table([rep], tmp_path)
        with open(tmp_path / "tagging.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["Entity Role", "HMM"]
        assert [r[0] for r in rows[-2:]] == ["Average Precision", "Micro Precision"]
        assert rows[-2][1] == "100.00"

    def test_tag_sequences(self, tiny_corpus):
        seqs = tag_sequences(tiny_corpus)
        toks, tags = seqs[0]
        assert tags[2:4] == ["B-PER_Victim", "I-PER_Victim"] and tags[10] == "B-LOC_Event"
        assert len(seqs) == 4
