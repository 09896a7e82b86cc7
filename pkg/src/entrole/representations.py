"""Entity representations from mention contexts, and role (query) representations.

Entity kinds, all built from a radius-``d`` context window:

* ``cluster``  -- the set of normalized context word vectors
* ``centroid`` -- the normalized mean of that set
* ``docvec``   -- a paragraph vector inferred for the window (PV-DBOW with
  negative sampling, word tables frozen)

Role queries are the learned role-token vector (``TV``), optionally expanded
with its ``n`` nearest word vectors (``TV-SWn``).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import re
import zlib
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corpus import ROLE_TOKENS, AnnotatedCorpus, EntityMention, RoleLabel, sentence_stream, substitute_roles
from .embeddings import (EmbeddingModel, NegativeSampler, TrainConfig, TrainingError, Vocabulary,
                         sgns_loss_grad, top_n_similar, train_skipgram, warm_start)

logger = logging.getLogger(__name__)

KINDS = ("cluster", "centroid", "docvec")
LEVELS = ("sentence", "document")
METHOD_NAMES = {"cluster": "E-W", "centroid": "E-V-C", "docvec": "E-V-D2V"}


class DegenerateRepresentationError(ValueError):
    pass


@dataclass(frozen=True)
class ContextWindow:
    mention: EntityMention
    radius: int
    tokens: tuple[str, ...]
    level: str = "sentence"


@dataclass
class EntityRepresentation:
    mention: EntityMention
    kind: str
    vectors: np.ndarray  # (N, D); N == 0 means no usable context
    n_context: int = 0
    n_oov: int = 0

    @property
    def is_empty(self) -> bool:
        return len(self.vectors) == 0


@dataclass
class RoleQuery:
    role: RoleLabel
    kind: str
    vectors: np.ndarray
    expansion: tuple[str, ...] = ()


@dataclass(frozen=True)
class DocvecConfig:
    steps: int = 50
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    negative_samples: int = 5
    unigram_power: float = 0.75
    seed: int = 1


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# context windows


def _window_tokens(corpus: AnnotatedCorpus, mention: EntityMention, d: int) -> list[str]:
    sent = corpus.document(mention.document_id).sentences[mention.sentence]
    left = sent[max(0, mention.start - d):mention.start]
    right = sent[mention.end + 1:mention.end + 1 + d]
    return [t.normalized for t in itertools.chain(left, right) if t.normalized]


def extract_window(corpus: AnnotatedCorpus, mention: EntityMention, d: int) -> ContextWindow:
    """Previous ``d`` and next ``d`` tokens of the mention's sentence, removed tokens dropped."""
    if d < 1:
        raise ValueError("window radius must be >= 1")
    return ContextWindow(mention, d, tuple(_window_tokens(corpus, mention, d)))


def extract_document_context(corpus: AnnotatedCorpus, mention: EntityMention, d: int) -> ContextWindow:
    """Windows of this and all earlier mentions of the same entity, earliest first."""
    if d < 1:
        raise ValueError("window radius must be >= 1")
    doc = corpus.document(mention.document_id)
    tokens = []
    for m in doc.mentions:
        if m.entity_key == mention.entity_key and m.mention_ordinal <= mention.mention_ordinal:
            tokens += _window_tokens(corpus, m, d)
    return ContextWindow(mention, d, tuple(tokens), "document")


# ---------------------------------------------------------------------------
# entity representations


def _lookup(window: ContextWindow, model: EmbeddingModel) -> tuple[np.ndarray, np.ndarray]:
    """Row indices and normalized vectors of in-vocabulary window tokens."""
    rows = np.array([model.vocab[t] for t in window.tokens if t in model.vocab], dtype=np.int64)
    vecs = model.input_vectors[rows].astype(np.float64)
    norms = np.linalg.norm(vecs, axis=1)
    keep = norms > 0
    return rows[keep], vecs[keep] / norms[keep, None]


def represent_cluster(window: ContextWindow, model: EmbeddingModel) -> EntityRepresentation:
    _, vecs = _lookup(window, model)
    return EntityRepresentation(window.mention, "cluster", vecs, len(window.tokens), len(window.tokens) - len(vecs))


def represent_centroid(window: ContextWindow, model: EmbeddingModel) -> EntityRepresentation:
    _, vecs = _lookup(window, model)
    n_oov = len(window.tokens) - len(vecs)
    if not len(vecs):
        return EntityRepresentation(window.mention, "centroid", vecs, len(window.tokens), n_oov)
    mean = vecs.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise DegenerateRepresentationError(f"context vectors of {window.mention.entity_key!r} cancel out")
    return EntityRepresentation(window.mention, "centroid", (mean / norm)[None, :], len(window.tokens), n_oov)


def _mention_seed(window: ContextWindow) -> int:
    m = window.mention
    key = f"{m.document_id}\x1f{m.entity_key}\x1f{m.mention_ordinal}\x1f{window.level}\x1f{window.radius}"
    return zlib.crc32(key.encode("utf-8"))


def infer_docvec(rows: np.ndarray, model: EmbeddingModel, cfg: DocvecConfig, seed) -> np.ndarray:
    """Gradient steps on a fresh paragraph vector predicting ``rows``; tables stay fixed."""
    rng = np.random.default_rng(seed)
    D = model.dim
    d = rng.uniform(-0.5 / D, 0.5 / D, size=D)
    if cfg.steps == 0 or not len(rows):
        return d
    sampler = NegativeSampler(np.maximum(model.vocab.frequencies, 0), cfg.unigram_power)
    w_out = model.output_vectors
    targets = np.empty((len(rows), cfg.negative_samples + 1), dtype=np.int64)
    targets[:, 0] = rows
    for step in range(cfg.steps):
        lr = max(cfg.learning_rate * (1 - step / cfg.steps), cfg.min_learning_rate)
        targets[:, 1:] = sampler.draw(rng, (len(rows), cfg.negative_samples))
        loss, grad, _ = sgns_loss_grad(d, w_out[targets].astype(np.float64))
        if not (np.isfinite(loss) and np.isfinite(grad).all()):
            raise TrainingError(f"non-finite paragraph-vector update at step {step} (loss={loss})")
        d = d - lr * grad
    return d


def represent_docvec(window: ContextWindow, model: EmbeddingModel,
                     cfg: DocvecConfig = DocvecConfig()) -> EntityRepresentation:
    rows, _ = _lookup(window, model)
    n_oov = len(window.tokens) - len(rows)
    if not len(rows):
        return EntityRepresentation(window.mention, "docvec", np.zeros((0, model.dim)), len(window.tokens), n_oov)
    d = infer_docvec(rows, model, cfg, [cfg.seed, _mention_seed(window)])
    norm = np.linalg.norm(d)
    if not np.isfinite(norm) or norm < 1e-12:
        raise DegenerateRepresentationError("inferred paragraph vector is zero")
    return EntityRepresentation(window.mention, "docvec", (d / norm)[None, :], len(window.tokens), n_oov)


def represent(window: ContextWindow, model: EmbeddingModel, kind: str,
              docvec_cfg: DocvecConfig = DocvecConfig()) -> EntityRepresentation:
    if kind == "cluster":
        return represent_cluster(window, model)
    if kind == "centroid":
        return represent_centroid(window, model)
    if kind == "docvec":
        return represent_docvec(window, model, docvec_cfg)
    raise ValueError(f"unknown representation kind {kind!r}")


@dataclass
class RepresentationSet:
    """Representations of every mention in a corpus, plus coverage counts."""
    kind: str
    level: str
    radius: int
    items: dict[EntityMention, EntityRepresentation | None]
    n_context: int = 0
    n_oov: int = 0

    @property
    def n_unrankable(self) -> int:
        return sum(1 for r in self.items.values() if r is None or r.is_empty)


def build_representations(corpus: AnnotatedCorpus, model: EmbeddingModel, kind: str, level: str = "sentence",
                          d: int = 5, docvec_cfg: DocvecConfig = DocvecConfig()) -> RepresentationSet:
    if level not in LEVELS:
        raise ValueError(f"unknown context level {level!r}")
    extract = extract_window if level == "sentence" else extract_document_context
    items = {}
    n_ctx = n_oov = 0
    for m in corpus.mentions():
        window = extract(corpus, m, d)
        try:
            rep = represent(window, model, kind, docvec_cfg)
        except DegenerateRepresentationError as exc:
            logger.warning("unrankable mention %s/%s: %s", m.document_id, m.entity_key, exc)
            rep = None
        items[m] = rep
        n_ctx += len(window.tokens)
        n_oov += rep.n_oov if rep is not None else 0
    return RepresentationSet(kind, level, d, items, n_ctx, n_oov)


# ---------------------------------------------------------------------------
# role vectors and queries


def role_training_stream(labelled: AnnotatedCorpus, unlabelled: AnnotatedCorpus | None = None) -> list[list[str]]:
    stream = substitute_roles(labelled)
    if unlabelled is not None:
        stream += sentence_stream(unlabelled)
    return stream


def learn_role_vectors(corpus: AnnotatedCorpus, base_model: EmbeddingModel, cfg: TrainConfig,
                       unlabelled: AnnotatedCorpus | None = None) -> EmbeddingModel:
    """Continue skip-gram training on a corpus whose mentions are replaced by role tokens.

    Word rows are warm-started from ``base_model``; the ten role tokens (and
    any other new token) start from random rows.  ``unlabelled`` documents
    contribute plain text only.
    """
    stream = role_training_stream(corpus, unlabelled)
    counts = Counter(itertools.chain.from_iterable(stream))
    base = base_model.vocab
    min_count = base.min_count
    tokens = list(base.tokens)
    tokens += sorted((t for t, c in counts.items() if c >= min_count and t not in base and t not in ROLE_TOKENS),
                     key=lambda t: (-counts[t], t))
    tokens += [r.token for r in RoleLabel if r.token not in base]
    vocab = Vocabulary(tokens, np.array([counts.get(t, 0) for t in tokens], dtype=np.int64), min_count,
                       base.specials | ROLE_TOKENS)
    model = warm_start(EmbeddingModel.random(vocab, base_model.dim, cfg.seed), base_model)
    return train_skipgram(model, stream, cfg)


_QUERY_RE = re.compile(r"^TV(?:-SW(\d+))?$")


def parse_query_kind(kind: str) -> int:
    """``"TV"`` -> 0, ``"TV-SW20"`` -> 20."""
    m = _QUERY_RE.match(kind)
    if not m:
        raise ValueError(f"unknown query kind {kind!r} (expected TV or TV-SW<n>)")
    return int(m.group(1) or 0)


def build_role_query(model: EmbeddingModel, role: RoleLabel, kind: str = "TV", n: int | None = None) -> RoleQuery:
    if role.token not in model.vocab:
        raise KeyError(f"role token {role.token} missing from model")
    if n is None:
        n = parse_query_kind(kind)
    if kind == "TV":
        n = 0
    rows = [model.vocab[role.token]]
    expansion = ()
    if n > 0:
        similar = top_n_similar(model, role.token, n, exclude=ROLE_TOKENS)
        expansion = tuple(t for t, _ in similar)
        rows += [model.vocab[t] for t in expansion]
    vecs = unit(model.input_vectors[rows].astype(np.float64))
    return RoleQuery(role, kind if n == 0 else f"TV-SW{n}", vecs, expansion)


# ---------------------------------------------------------------------------
# on-disk cache


def corpus_digest(corpus: AnnotatedCorpus) -> str:
    h = hashlib.sha256()
    for doc in corpus:
        h.update(doc.id.encode() + b"\0")
        for sent in doc.sentences:
            for t in sent:
                h.update(t.surface.encode() + b"\x1f" + t.normalized.encode() + b"\x1e")
            h.update(b"\n")
        for m in doc.mentions:
            h.update(f"{m.entity_key}|{m.sentence}|{m.start}|{m.end}|{m.role.value}".encode() + b"\n")
    return h.hexdigest()


def model_digest(model: EmbeddingModel) -> str:
    h = hashlib.sha256()
    h.update("\n".join(model.vocab.tokens).encode())
    h.update(np.ascontiguousarray(model.input_vectors).tobytes())
    h.update(np.ascontiguousarray(model.output_vectors).tobytes())
    return h.hexdigest()


class RepresentationCache:
    """Binary sidecar store keyed by (corpus, model, config) digests."""

    def __init__(self, directory):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)

    def key(self, corpus_hash: str, model_hash: str, config: dict) -> str:
        cfg = json.dumps(config, sort_keys=True)
        return hashlib.sha256(f"{corpus_hash}|{model_hash}|{cfg}".encode()).hexdigest()[:32]

    def path(self, key: str) -> str:
        return os.path.join(self.directory, f"reps-{key}.npz")

    def get_or_build(self, corpus: AnnotatedCorpus, model: EmbeddingModel, kind: str, level: str, d: int,
                     docvec_cfg: DocvecConfig = DocvecConfig(),
                     corpus_hash: str | None = None, model_hash: str | None = None) -> RepresentationSet:
        config = {"kind": kind, "level": level, "d": d, "docvec": asdict(docvec_cfg)}
        key = self.key(corpus_hash or corpus_digest(corpus), model_hash or model_digest(model), config)
        path = self.path(key)
        mentions = list(corpus.mentions())
        if os.path.exists(path):
            with np.load(path) as data:
                offsets, vectors = data["offsets"], data["vectors"]
                flags, stats = data["flags"], data["stats"]
            if len(offsets) == len(mentions) + 1:
                items = {}
                for i, m in enumerate(mentions):
                    if flags[i, 0] == 0:
                        items[m] = None
                    else:
                        items[m] = EntityRepresentation(m, kind, vectors[offsets[i]:offsets[i + 1]],
                                                        int(flags[i, 1]), int(flags[i, 2]))
                logger.info("loaded cached representations %s", path)
                return RepresentationSet(kind, level, d, items, int(stats[0]), int(stats[1]))
        reps = build_representations(corpus, model, kind, level, d, docvec_cfg)
        offsets = [0]
        chunks, flags = [], []
        for m in mentions:
            r = reps.items[m]
            vec = r.vectors if r is not None else np.zeros((0, model.dim))
            chunks.append(vec)
            offsets.append(offsets[-1] + len(vec))
            flags.append((0 if r is None else 1, r.n_context if r else 0, r.n_oov if r else 0))
        tmp = path + ".tmp.npz"
        np.savez(tmp, offsets=np.array(offsets, dtype=np.int64),
                 vectors=np.concatenate(chunks) if chunks else np.zeros((0, model.dim)),
                 flags=np.array(flags, dtype=np.int64).reshape(-1, 3),
                 stats=np.array([reps.n_context, reps.n_oov], dtype=np.int64))
        os.replace(tmp, path)
        return reps
