"""Skip-gram word vectors trained with negative sampling.

The model keeps two V x D float32 tables: ``input_vectors`` (the word
vectors used downstream) and ``output_vectors`` (context vectors used by the
negative-sampling objective).  Training is single-threaded and deterministic
by default; ``TrainConfig.workers > 1`` runs lock-free threads that share the
tables and give up bitwise reproducibility.
"""
from __future__ import annotations

import copy
import logging
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"ENTROLEV"
BINARY_VERSION = 1


class ModelFormatError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    frequencies: np.ndarray
    min_count: int = 1
    specials: frozenset[str] = frozenset()
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.int64)
        self.specials = frozenset(self.specials)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token) -> bool:
        return token in self.index

    def __getitem__(self, token: str) -> int:
        return self.index[token]

    def frequency(self, token: str) -> int:
        return int(self.frequencies[self.index[token]])

    def __eq__(self, other) -> bool:
        return (isinstance(other, Vocabulary) and self.tokens == other.tokens
                and np.array_equal(self.frequencies, other.frequencies)
                and self.min_count == other.min_count and self.specials == other.specials)


def build_vocab(tokens: Iterable[str], min_count: int = 2, specials: Iterable[str] = ()) -> Vocabulary:
    """Count tokens; keep those with ``count >= min_count`` plus all specials.

    Indices are assigned by descending frequency, ties broken alphabetically.
    """
    counts = Counter(tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty token stream")
    specials = frozenset(specials)
    kept = {t for t, c in counts.items() if c >= min_count} | specials
    order = sorted(kept, key=lambda t: (-counts.get(t, 0), t))
    return Vocabulary(order, np.array([counts.get(t, 0) for t in order], dtype=np.int64),
                      min_count, specials)


def merge_vocab(base: Vocabulary, extra: Vocabulary) -> Vocabulary:
    """Union of two vocabularies; base indices are preserved, new tokens appended."""
    tokens = list(base.tokens)
    freqs = [int(base.frequencies[i]) for i in range(len(base))]
    for i, t in enumerate(extra.tokens):
        if t in base:
            freqs[base[t]] = max(freqs[base[t]], int(extra.frequencies[i]))
        else:
            tokens.append(t)
            freqs.append(int(extra.frequencies[i]))
    return Vocabulary(tokens, np.array(freqs, dtype=np.int64), min(base.min_count, extra.min_count),
                      base.specials | extra.specials)


@dataclass
class TrainConfig:
    window_radius: int = 5
    negative_samples: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    subsample_threshold: float = 1e-3
    seed: int = 1
    unigram_power: float = 0.75
    workers: int = 1
    probe_pairs: int = 2000
    batch_words: int = 40

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.negative_samples < 1:
            raise ValueError("negative_samples must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.workers < 1:
            raise ValueError("epochs must be >= 0 and workers >= 1")


@dataclass
class EmbeddingModel:
    vocab: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input_vectors.shape != self.output_vectors.shape:
            raise ValueError("input and output tables differ in shape")
        if self.input_vectors.shape[0] != len(self.vocab):
            raise ValueError("vector table does not match vocabulary size")

    @classmethod
    def random(cls, vocab: Vocabulary, dim: int, seed: int = 1) -> "EmbeddingModel":
        rng = np.random.default_rng(seed)
        w_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(len(vocab), dim)).astype(np.float32)
        return cls(vocab, w_in, np.zeros((len(vocab), dim), dtype=np.float32))

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __contains__(self, token) -> bool:
        return token in self.vocab

    def vector(self, token: str) -> np.ndarray:
        return self.input_vectors[self.vocab[token]]

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.vocab, self.input_vectors.copy(), self.output_vectors.copy(),
                              copy.deepcopy(self.meta))

    def normalized(self) -> np.ndarray:
        norms = np.linalg.norm(self.input_vectors.astype(np.float64), axis=1, keepdims=True)
        return self.input_vectors / np.where(norms == 0, 1.0, norms)


# ---------------------------------------------------------------------------
# objective


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sigmoid(x):
    return np.exp(log_sigmoid(x))


def sgns_loss_grad(v: np.ndarray, U: np.ndarray):
    """Negative-sampling loss and gradients.

    ``U`` has shape ``(..., K + 1, D)``; along the second-to-last axis row 0
    is the true context's output vector and rows 1..K are negatives.  ``v``
    is either one centre vector of shape ``(D,)`` shared by every group, or
    one centre per group with shape ``(..., D)``.  The loss summed over all
    groups is ``-log s(u_o . v) - sum_k log s(-u_k . v)``.
    Returns ``(loss, dL/dv, dL/dU)`` with gradients shaped like the inputs.
    """
    vb = v[..., None, :]
    scores = np.sum(U * vb, axis=-1)
    labels = np.zeros(scores.shape[-1], dtype=scores.dtype)
    labels[0] = 1.0
    loss = -float(np.sum(log_sigmoid((2.0 * labels - 1.0) * scores)))
    dscore = sigmoid(scores) - labels
    grad_v = np.sum(dscore[..., None] * U, axis=-2)
    if v.ndim == 1:
        grad_v = grad_v.reshape(-1, v.shape[0]).sum(axis=0)
    grad_U = dscore[..., None] * vb
    return loss, grad_v, grad_U


class NegativeSampler:
    """Draws token indices with probability proportional to ``freq ** power``."""

    def __init__(self, frequencies: np.ndarray, power: float = 0.75):
        weights = np.asarray(frequencies, dtype=np.float64) ** power
        if weights.sum() <= 0:
            raise ValueError("no token has positive frequency")
        self.probabilities = weights / weights.sum()
        self._cdf = np.cumsum(self.probabilities)
        self._cdf[-1] = 1.0

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.searchsorted(self._cdf, rng.random(size), side="right")


def _keep_probabilities(vocab: Vocabulary, threshold: float) -> np.ndarray:
    if threshold <= 0:
        return np.ones(len(vocab))
    f = vocab.frequencies / max(vocab.frequencies.sum(), 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        keep = (np.sqrt(f / threshold) + 1.0) * threshold / f
    return np.where(f > 0, np.minimum(keep, 1.0), 1.0)


def encode(vocab: Vocabulary, sentences: Iterable[Sequence[str]]) -> list[np.ndarray]:
    idx = vocab.index
    return [np.fromiter((idx[t] for t in s if t in idx), dtype=np.int64) for s in sentences]


def _probe_batch(ids, cfg, sampler):
    rng = np.random.default_rng([cfg.seed, 7919])
    pairs = []
    R = cfg.window_radius
    for s in ids:
        for i in range(len(s)):
            for j in range(max(0, i - R), min(len(s), i + R + 1)):
                if j != i:
                    pairs.append((s[i], s[j]))
    if not pairs:
        return None
    pairs = np.array(pairs, dtype=np.int64)
    if len(pairs) > cfg.probe_pairs:
        pairs = pairs[rng.choice(len(pairs), cfg.probe_pairs, replace=False)]
    negs = sampler.draw(rng, (len(pairs), cfg.negative_samples))
    return pairs[:, 0], np.concatenate([pairs[:, 1:], negs], axis=1)


def probe_loss(model: EmbeddingModel, probe) -> float:
    centres, targets = probe
    scores = np.einsum("nd,nkd->nk", model.input_vectors[centres].astype(np.float64),
                       model.output_vectors[targets].astype(np.float64))
    scores[:, 1:] *= -1
    return float(-log_sigmoid(scores).sum(axis=1).mean())


class _Schedule:
    def __init__(self, cfg, total):
        self.cfg = cfg
        self.total = max(total, 1)
        self.done = 0

    def rate(self):
        frac = min(self.done / self.total, 1.0)
        return max(self.cfg.learning_rate * (1.0 - frac), self.cfg.min_learning_rate)


def _window_pairs(n: int, radius: int):
    """Centre and context positions of every pair within ``radius``."""
    pos = np.arange(n)
    offsets = np.concatenate([np.arange(-radius, 0), np.arange(1, radius + 1)])
    ctx = pos[:, None] + offsets[None, :]
    valid = (ctx >= 0) & (ctx < n)
    centre = np.broadcast_to(pos[:, None], ctx.shape)
    return centre[valid], ctx[valid]


def scatter_add(table: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``table[rows] += values`` with repeated rows accumulated (like ``np.add.at``)."""
    order = np.argsort(rows, kind="stable")
    r = rows[order]
    first = np.empty(len(r), dtype=bool)
    first[:1] = True
    np.not_equal(r[1:], r[:-1], out=first[1:])
    starts = np.flatnonzero(first)
    table[r[starts]] += np.add.reduceat(values[order], starts, axis=0).astype(table.dtype)


def _batches(ids, batch_words):
    batch, size = [], 0
    for s in ids:
        batch.append(s)
        size += len(s)
        if size >= batch_words:
            yield batch
            batch, size = [], 0
    if batch:
        yield batch


def _train_shard(model, ids, cfg, sampler, keep, rng, schedule, epoch):
    """One pass over ``ids``; each batch of sentences is one vectorised SGD step."""
    w_in, w_out = model.input_vectors, model.output_vectors
    K, D = cfg.negative_samples, model.dim
    inv = model.vocab.tokens
    for batch in _batches(ids, cfg.batch_words):
        lr = schedule.rate()
        centres, contexts = [], []
        for s in batch:
            schedule.done += len(s)
            if keep is not None:
                s = s[rng.random(len(s)) < keep[s]]
            if len(s) < 2:
                continue
            ci, oi = _window_pairs(len(s), cfg.window_radius)
            centres.append(s[ci])
            contexts.append(s[oi])
        if not centres:
            continue
        centres = np.concatenate(centres)
        targets = np.empty((len(centres), K + 1), dtype=np.int64)
        targets[:, 0] = np.concatenate(contexts)
        targets[:, 1:] = sampler.draw(rng, (len(centres), K))
        loss, gv, gU = sgns_loss_grad(w_in[centres], w_out[targets])
        if not (np.isfinite(loss) and np.isfinite(gv).all() and np.isfinite(gU).all()):
            bad = sorted({inv[c] for c in centres[~np.isfinite(gv).all(axis=1)]})
            raise TrainingError(
                f"non-finite update in epoch {epoch} (lr={lr:.6g}, loss={loss}, centres={bad[:5]}, "
                f"max |w_in|={float(np.abs(w_in).max())}, max |w_out|={float(np.abs(w_out).max())})")
        scatter_add(w_out, targets.ravel(), -lr * gU.reshape(-1, D))
        scatter_add(w_in, centres, -lr * gv)


def train_skipgram(model: EmbeddingModel, sentences: Iterable[Sequence[str]], cfg: TrainConfig) -> EmbeddingModel:
    """Return a copy of ``model`` trained on ``sentences`` (lists of tokens).

    Tokens missing from the vocabulary are dropped before windowing.  The
    probe loss (mean objective over a fixed sample of pairs) is recorded per
    epoch under ``meta["probe_loss"]``.
    """
    model = model.copy()
    if cfg.epochs == 0:
        return model
    ids = [s for s in encode(model.vocab, sentences) if len(s) > 1]
    sampler = NegativeSampler(np.maximum(model.vocab.frequencies, 0), cfg.unigram_power)
    keep = _keep_probabilities(model.vocab, cfg.subsample_threshold) if cfg.subsample_threshold > 0 else None
    schedule = _Schedule(cfg, sum(len(s) for s in ids) * cfg.epochs)
    probe = _probe_batch(ids, cfg, sampler)
    history = [probe_loss(model, probe)] if probe else []
    for epoch in range(cfg.epochs):
        if cfg.workers == 1:
            rng = np.random.default_rng([cfg.seed, epoch])
            _train_shard(model, ids, cfg, sampler, keep, rng, schedule, epoch)
        else:
            shards = [ids[w::cfg.workers] for w in range(cfg.workers)]
            errors = []

            def run(w):
                try:
                    _train_shard(model, shards[w], cfg, sampler, keep,
                                 np.random.default_rng([cfg.seed, epoch, w]), schedule, epoch)
                except Exception as exc:  # re-raised in the caller thread
                    errors.append(exc)

            threads = [threading.Thread(target=run, args=(w,)) for w in range(cfg.workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            if errors:
                raise errors[0]
        if probe:
            history.append(probe_loss(model, probe))
            if history[-1] > history[-2] * 1.05:
                logger.warning("probe loss rose from %.4f to %.4f in epoch %d", history[-2], history[-1], epoch)
        logger.info("epoch %d/%d done, probe loss %s", epoch + 1, cfg.epochs,
                    f"{history[-1]:.4f}" if history else "n/a")
    model.meta["probe_loss"] = history
    return model


# ---------------------------------------------------------------------------
# initialisation from other vectors


def _copy_rows(model: EmbeddingModel, tokens: Sequence[str], rows: np.ndarray,
               out_rows: np.ndarray | None = None) -> int:
    covered = 0
    for t, row in zip(tokens, range(len(tokens))):
        if t in model.vocab:
            i = model.vocab[t]
            model.input_vectors[i] = rows[row]
            if out_rows is not None:
                model.output_vectors[i] = out_rows[row]
            covered += 1
    return covered


def init_pretrained(model: EmbeddingModel, path) -> EmbeddingModel:
    """Overwrite input rows of tokens found in a text vector file.

    Tokens absent from the file keep their random rows; output vectors are
    reset to zero.  The number of covered tokens is stored in
    ``meta["pretrained_coverage"]``.
    """
    tokens, matrix = read_text_vectors(path)
    if matrix.shape[1] != model.dim:
        raise DimensionMismatchError(f"file has dimension {matrix.shape[1]}, model has {model.dim}")
    model = model.copy()
    model.output_vectors[:] = 0.0
    covered = _copy_rows(model, tokens, matrix)
    model.meta["pretrained_coverage"] = covered
    logger.info("pretrained vectors cover %d of %d vocabulary tokens", covered, len(model.vocab))
    return model


def warm_start(model: EmbeddingModel, base: EmbeddingModel) -> EmbeddingModel:
    """Seed ``model`` with ``base``'s input and output rows for shared tokens."""
    if base.dim != model.dim:
        raise DimensionMismatchError(f"base has dimension {base.dim}, model has {model.dim}")
    model = model.copy()
    covered = _copy_rows(model, base.vocab.tokens, base.input_vectors, base.output_vectors)
    model.meta["warm_start_coverage"] = covered
    return model


# ---------------------------------------------------------------------------
# queries


def top_n_similar(model: EmbeddingModel, query: str, n: int, exclude: Iterable[str] = ()) -> list[tuple[str, float]]:
    """Nearest tokens by cosine over input vectors; ties broken by vocabulary index."""
    if query not in model.vocab:
        raise KeyError(f"{query!r} is not in the vocabulary")
    if n <= 0:
        return []
    w = model.input_vectors.astype(np.float64)
    norms = np.linalg.norm(w, axis=1)
    norms[norms == 0] = 1.0
    q = model.vocab[query]
    cos = (w @ w[q]) / (norms * norms[q])
    cos[q] = -np.inf
    for t in exclude:
        if t in model.vocab:
            cos[model.vocab[t]] = -np.inf
    order = np.lexsort((np.arange(len(cos)), -cos))
    order = [i for i in order if np.isfinite(cos[i])][:n]
    return [(model.vocab.tokens[i], float(cos[i])) for i in order]


# ---------------------------------------------------------------------------
# persistence


def read_text_vectors(path) -> tuple[list[str], np.ndarray]:
    tokens, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            if not line.strip():
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                raise ModelFormatError(f"line {lineno}: expected {dim} values, found {len(parts) - 1}")
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError:
                raise ModelFormatError(f"line {lineno}: non-numeric vector value") from None
            tokens.append(parts[0])
    matrix = np.array(rows, dtype=np.float32).reshape(len(rows), dim or 0)
    return tokens, matrix


def save_model(model: EmbeddingModel, path, format: str = "binary") -> None:
    if format == "text":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{len(model.vocab)} {model.dim}\n")
            for t, row in zip(model.vocab.tokens, model.input_vectors):
                if not t or any(ch.isspace() for ch in t):
                    raise ModelFormatError(f"token {t!r} cannot be written in text format")
                fh.write(t + " " + " ".join(f"{x:.9g}" for x in row) + "\n")
        return
    if format != "binary":
        raise ValueError(f"unknown model format {format!r}")
    v = model.vocab
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IIII", BINARY_VERSION, len(v), model.dim, v.min_count))
        for i, t in enumerate(v.tokens):
            raw = t.encode("utf-8")
            fh.write(struct.pack("<IqB", len(raw), int(v.frequencies[i]), t in v.specials))
            fh.write(raw)
        fh.write(np.ascontiguousarray(model.input_vectors, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.output_vectors, dtype="<f4").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise ModelFormatError("truncated model file")
    return data


def load_model(path) -> EmbeddingModel:
    """Load a binary model, or a text vector file (output vectors then zero)."""
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
        if head == BINARY_MAGIC:
            version, V, D, min_count = struct.unpack("<IIII", _read_exact(fh, 16))
            if version != BINARY_VERSION:
                raise ModelFormatError(f"unsupported model version {version} (expected {BINARY_VERSION})")
            tokens, freqs, specials = [], [], set()
            for _ in range(V):
                n, freq, special = struct.unpack("<IqB", _read_exact(fh, 13))
                tok = _read_exact(fh, n).decode("utf-8")
                tokens.append(tok)
                freqs.append(freq)
                if special:
                    specials.add(tok)
            w_in = np.frombuffer(_read_exact(fh, 4 * V * D), dtype="<f4").reshape(V, D).astype(np.float32)
            w_out = np.frombuffer(_read_exact(fh, 4 * V * D), dtype="<f4").reshape(V, D).astype(np.float32)
            if fh.read(1):
                raise ModelFormatError("trailing bytes after model payload")
            vocab = Vocabulary(tokens, np.array(freqs, dtype=np.int64), min_count, frozenset(specials))
            return EmbeddingModel(vocab, w_in, w_out)
    tokens, matrix = read_text_vectors(path)
    vocab = Vocabulary(tokens, np.zeros(len(tokens), dtype=np.int64), 1)
    return EmbeddingModel(vocab, matrix, np.zeros_like(matrix))
