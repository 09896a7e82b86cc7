"""Linear-chain CRF with L2-regularized conditional log-likelihood.

Scores of a tag sequence ``y`` for tokens ``x``:
``start[y0] + sum_i sum_{f in feats(x, i)} W[f, y_i] + sum_i trans[y_{i-1}, y_i]``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .hmm import default_tagset, viterbi

logger = logging.getLogger(__name__)


class CrfTrainingError(RuntimeError):
    pass


def _word_features(word: str, prefix: str) -> list[str]:
    feats = [f"{prefix}w={word.lower()}", f"{prefix}p3={word[:3]}"]
    if word.isupper():
        feats.append(f"{prefix}caps")
    if word.istitle():
        feats.append(f"{prefix}title")
    return feats


@dataclass(frozen=True)
class FeatureTemplate:
    """Lowercased word, 3-letter prefix, all-caps and initial-capital flags,
    for the word itself and its two neighbours, plus a bias."""
    context: int = 1
    bias: bool = True

    def extract(self, tokens: Sequence[str]) -> list[list[str]]:
        out = []
        n = len(tokens)
        for i in range(n):
            feats = ["bias"] if self.bias else []
            feats += _word_features(tokens[i], "")
            for off in range(1, self.context + 1):
                feats += _word_features(tokens[i - off], f"-{off}:") if i - off >= 0 else [f"-{off}:BOS"]
                feats += _word_features(tokens[i + off], f"+{off}:") if i + off < n else [f"+{off}:EOS"]
            out.append(feats)
        return out


@dataclass
class CrfModel:
    tags: list[str]
    features: dict[str, int]
    weights: np.ndarray  # (F, T)
    trans: np.ndarray    # (T, T)
    start: np.ndarray    # (T,)
    l2: float = 1e-3
    template: FeatureTemplate = field(default_factory=FeatureTemplate)
    history: list[float] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return self.weights.size + self.trans.size + self.start.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.trans.ravel(), self.start])

    def set_flat(self, theta: np.ndarray) -> None:
        F, T = self.weights.shape
        self.weights = theta[:F * T].reshape(F, T).copy()
        self.trans = theta[F * T:F * T + T * T].reshape(T, T).copy()
        self.start = theta[F * T + T * T:].copy()

    def feature_ids(self, tokens: Sequence[str]) -> list[np.ndarray]:
        return [np.array([self.features[f] for f in fs if f in self.features], dtype=np.int64)
                for fs in self.template.extract(tokens)]

    def unary(self, fids: Sequence[np.ndarray]) -> np.ndarray:
        return np.stack([self.weights[f].sum(axis=0) for f in fids])


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.squeeze(np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m, axis=axis)


def forward_backward(start, trans, unary):
    """Log-space forward/backward; returns ``(log Z, log alpha, log beta)``."""
    n, T = unary.shape
    alpha = np.empty((n, T))
    beta = np.zeros((n, T))
    alpha[0] = start + unary[0]
    for i in range(1, n):
        alpha[i] = _lse(alpha[i - 1][:, None] + trans, 0) + unary[i]
    for i in range(n - 2, -1, -1):
        beta[i] = _lse(trans + (unary[i + 1] + beta[i + 1])[None, :], 1)
    return float(logsumexp(alpha[-1])), alpha, beta


def log_partition(start, trans, unary) -> float:
    return forward_backward(start, trans, unary)[0]


def sequence_score(start, trans, unary, y: Sequence[int]) -> float:
    y = np.asarray(y)
    return float(start[y[0]] + unary[np.arange(len(y)), y].sum() + trans[y[:-1], y[1:]].sum())


def sequence_nll_grad(model: CrfModel, fids: Sequence[np.ndarray], y: Sequence[int]):
    """Negative log-likelihood of one sequence and its gradient.

    The weight gradient is sparse: ``(rows, values)`` such that
    ``dW[rows[j]] += values[j]``.  Transition and start gradients are dense.
    """
    y = np.asarray(y)
    unary = model.unary(fids)
    log_z, alpha, beta = forward_backward(model.start, model.trans, unary)
    nll = log_z - sequence_score(model.start, model.trans, unary, y)
    d_unary = np.exp(alpha + beta - log_z)  # node marginals
    g_start = d_unary[0].copy()
    g_start[y[0]] -= 1.0
    d_unary[np.arange(len(y)), y] -= 1.0
    rows = np.concatenate(fids)
    pos = np.repeat(np.arange(len(fids)), [len(f) for f in fids])
    g_trans = np.zeros_like(model.trans)
    if len(y) > 1:
        edge = alpha[:-1, :, None] + model.trans[None] + (unary[1:] + beta[1:])[:, None, :] - log_z
        g_trans += np.exp(edge).sum(axis=0)
        np.add.at(g_trans, (y[:-1], y[1:]), -1.0)
    return nll, (rows, d_unary[pos]), g_trans, g_start


def objective(model: CrfModel, data) -> tuple[float, np.ndarray]:
    """Mean NLL over ``data`` plus ``l2 / 2 * |theta|^2``, and its gradient (flat)."""
    theta = model.flat()
    total = 0.0
    g_w = np.zeros_like(model.weights)
    g_t = np.zeros_like(model.trans)
    g_s = np.zeros_like(model.start)
    for fids, y in data:
        nll, (rows, vals), gt, gs = sequence_nll_grad(model, fids, y)
        total += nll
        np.add.at(g_w, rows, vals)
        g_t += gt
        g_s += gs
    n = max(len(data), 1)
    grad = np.concatenate([g_w.ravel(), g_t.ravel(), g_s]) / n + model.l2 * theta
    return total / n + 0.5 * model.l2 * float(theta @ theta), grad


def objective_value(model: CrfModel, data) -> float:
    total = 0.0
    for fids, y in data:
        unary = model.unary(fids)
        total += log_partition(model.start, model.trans, unary) - sequence_score(model.start, model.trans, unary, y)
    theta = model.flat()
    return total / max(len(data), 1) + 0.5 * model.l2 * float(theta @ theta)


@dataclass
class OptimizerConfig:
    method: str = "sgd"  # "sgd" (mini-batch, step decay) or "lbfgs"
    epochs: int = 15
    learning_rate: float = 0.5
    decay: float = 0.8
    batch_size: int = 16
    seed: int = 1
    max_iter: int = 200


def _index_features(template: FeatureTemplate, sequences) -> dict[str, int]:
    features: dict[str, int] = {}
    for tokens, _ in sequences:
        for fs in template.extract(tokens):
            for f in fs:
                features.setdefault(f, len(features))
    return features


def crf_train(sequences: Sequence[Sequence[tuple[str, str]]], template: FeatureTemplate = FeatureTemplate(),
              l2: float = 1e-3, optimizer: OptimizerConfig = OptimizerConfig(),
              tags: Sequence[str] | None = None) -> CrfModel:
    """Fit weights on ``(word, tag)`` sequences.

    ``sgd`` makes proximal mini-batch steps (the L2 term is applied as
    ``theta / (1 + lr * l2)``, stable for any ``l2``) with the step size
    multiplied by ``decay`` every epoch.  The full objective after each epoch
    is kept in ``model.history``.
    """
    pairs = [([w for w, _ in s], [t for _, t in s]) for s in sequences if len(s)]
    if not pairs:
        raise ValueError("cannot train a CRF on an empty corpus")
    tags = list(tags) if tags is not None else default_tagset()
    for _, ts in pairs:
        for t in ts:
            if t not in tags:
                tags.append(t)
    tag_id = {t: i for i, t in enumerate(tags)}
    features = _index_features(template, pairs)
    T = len(tags)
    model = CrfModel(tags, features, np.zeros((len(features), T)), np.zeros((T, T)), np.zeros(T), l2, template)
    data = [(model.feature_ids(toks), np.array([tag_id[t] for t in ts])) for toks, ts in pairs]

    def check(loss, where):
        if not np.isfinite(loss):
            raise CrfTrainingError(f"non-finite objective {where} (l2={l2}, |theta|={np.linalg.norm(model.flat()):.4g})")

    model.history.append(objective_value(model, data))
    if optimizer.method == "lbfgs":
        def fun(theta):
            model.set_flat(theta)
            value, grad = objective(model, data)
            check(value, "during L-BFGS")
            return value, grad

        res = minimize(fun, model.flat(), jac=True, method="L-BFGS-B",
                       options={"maxiter": optimizer.max_iter})
        model.set_flat(res.x)
        model.history.append(float(res.fun))
        return model
    if optimizer.method != "sgd":
        raise ValueError(f"unknown optimizer {optimizer.method!r}")

    rng = np.random.default_rng(optimizer.seed)
    lr = optimizer.learning_rate
    for epoch in range(optimizer.epochs):
        order = rng.permutation(len(data))
        for b in range(0, len(order), optimizer.batch_size):
            batch = [data[i] for i in order[b:b + optimizer.batch_size]]
            rows, vals = [], []
            g_t = np.zeros_like(model.trans)
            g_s = np.zeros_like(model.start)
            for fids, y in batch:
                _, (r, v), gt, gs = sequence_nll_grad(model, fids, y)
                rows.append(r)
                vals.append(v)
                g_t += gt
                g_s += gs
            step = lr / len(batch)
            np.add.at(model.weights, np.concatenate(rows), -step * np.concatenate(vals))
            model.trans -= step * g_t
            model.start -= step * g_s
            if l2 > 0:
                shrink = 1.0 / (1.0 + lr * l2)
                model.weights *= shrink
                model.trans *= shrink
                model.start *= shrink
        loss = objective_value(model, data)
        check(loss, f"after epoch {epoch}")
        if loss > model.history[-1] * 1.05:
            logger.warning("CRF objective rose from %.4f to %.4f in epoch %d", model.history[-1], loss, epoch)
        model.history.append(loss)
        lr *= optimizer.decay
    return model


def crf_decode(model: CrfModel, tokens: Sequence[str]) -> list[str]:
    if not len(tokens):
        raise ValueError("cannot decode an empty sequence")
    path, _ = viterbi(model.start, model.trans, model.unary(model.feature_ids(tokens)))
    return [model.tags[i] for i in path]
