"""First-order HMM tagger with additive smoothing and log-space Viterbi decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import RoleLabel

UNK = "<UNK>"


def default_tagset() -> list[str]:
    """``O`` followed by ``B-``/``I-`` tags for every role."""
    tags = ["O"]
    for r in RoleLabel:
        tags += [f"B-{r.value}", f"I-{r.value}"]
    return tags


@dataclass
class HmmModel:
    tags: list[str]
    vocab: dict[str, int]  # the UNK column is len(vocab)
    log_start: np.ndarray  # (T,)
    log_trans: np.ndarray  # (T, T), row = previous tag
    log_emit: np.ndarray   # (T, V + 1)
    alpha_t: float = 0.1
    alpha_e: float = 0.1
    lowercase: bool = False

    def word_ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = len(self.vocab)
        if self.lowercase:
            tokens = [t.lower() for t in tokens]
        return np.array([self.vocab.get(t, unk) for t in tokens], dtype=np.int64)

    def path_log_prob(self, tokens: Sequence[str], tags: Sequence[str]) -> float:
        """``log P(tags, tokens)``."""
        ti = [self.tags.index(t) for t in tags]
        wi = self.word_ids(tokens)
        lp = self.log_start[ti[0]] + self.log_emit[ti[0], wi[0]]
        for i in range(1, len(ti)):
            lp += self.log_trans[ti[i - 1], ti[i]] + self.log_emit[ti[i], wi[i]]
        return float(lp)


def _normalize_rows(counts: np.ndarray, alpha: float) -> np.ndarray:
    smoothed = counts + alpha
    totals = smoothed.sum(axis=-1, keepdims=True)
    probs = np.where(totals > 0, smoothed / np.where(totals > 0, totals, 1.0), 1.0 / counts.shape[-1])
    with np.errstate(divide="ignore"):
        return np.log(probs)


def hmm_train(sequences: Sequence[Sequence[tuple[str, str]]], alpha_t: float = 0.1, alpha_e: float = 0.1,
              tags: Sequence[str] | None = None, lowercase: bool = False) -> HmmModel:
    """Maximum-likelihood estimates with additive smoothing.

    ``sequences`` holds ``(word, tag)`` pairs.  Each emission distribution
    covers the training vocabulary plus one UNK column, which receives only
    smoothing mass.
    """
    sequences = [s for s in sequences if len(s)]
    if not sequences:
        raise ValueError("cannot train an HMM on an empty corpus")
    if alpha_t < 0 or alpha_e < 0:
        raise ValueError("smoothing constants must be >= 0")
    tags = list(tags) if tags is not None else default_tagset()
    for s in sequences:
        for _, t in s:
            if t not in tags:
                tags.append(t)
    tag_id = {t: i for i, t in enumerate(tags)}
    vocab: dict[str, int] = {}
    for s in sequences:
        for w, _ in s:
            vocab.setdefault(w.lower() if lowercase else w, len(vocab))
    T, V = len(tags), len(vocab)
    start = np.zeros(T)
    trans = np.zeros((T, T))
    emit = np.zeros((T, V + 1))
    for s in sequences:
        prev = None
        for w, t in s:
            ti = tag_id[t]
            emit[ti, vocab[w.lower() if lowercase else w]] += 1
            if prev is None:
                start[ti] += 1
            else:
                trans[prev, ti] += 1
            prev = ti
    return HmmModel(tags, vocab, _normalize_rows(start, alpha_t), _normalize_rows(trans, alpha_t),
                    _normalize_rows(emit, alpha_e), alpha_t, alpha_e, lowercase)


def viterbi(log_start: np.ndarray, log_trans: np.ndarray, log_obs: np.ndarray) -> tuple[list[int], float]:
    """Best path for scores ``start[t0] + sum obs[i, t_i] + sum trans[t_{i-1}, t_i]``.

    Ties go to the lowest tag index.
    """
    n, T = log_obs.shape
    score = log_start + log_obs[0]
    back = np.zeros((n, T), dtype=np.int64)
    for i in range(1, n):
        cand = score[:, None] + log_trans
        back[i] = np.argmax(cand, axis=0)
        score = cand[back[i], np.arange(T)] + log_obs[i]
    last = int(np.argmax(score))
    best = float(score[last])
    path = [last]
    for i in range(n - 1, 0, -1):
        path.append(int(back[i, path[-1]]))
    return path[::-1], best


def viterbi_decode(model: HmmModel, tokens: Sequence[str]) -> list[str]:
    if not len(tokens):
        raise ValueError("cannot decode an empty sequence")
    obs = model.log_emit[:, model.word_ids(tokens)].T
    path, _ = viterbi(model.log_start, model.log_trans, obs)
    return [model.tags[i] for i in path]
