"""End-to-end pipelines driven by a JSON configuration.

Ranking: preprocess -> phrase merge -> word vectors -> role vectors ->
entity representations -> ranking -> mAP reports.
Tagging: HMM / CRF training on a train split, decoding and role precision.
"""
from __future__ import annotations

import contextlib
import dataclasses
import itertools
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from . import corpus as C
from .embeddings import (EmbeddingModel, TrainConfig, build_vocab, init_pretrained, load_model, save_model,
                         train_skipgram)
from .phrases import PhraseConfig, PhraseTable, collocation_scores, corpus_token_rows, load_relation_phrases, \
    merge_phrases
from .ranking import RankingReport, evaluate_rankings, rank_entities, write_comparison
from .representations import (METHOD_NAMES, DocvecConfig, RepresentationCache, build_representations,
                              build_role_query, corpus_digest, learn_role_vectors, model_digest,
                              parse_query_kind)
from .taggers import (FeatureTemplate, OptimizerConfig, crf_decode, crf_train, hmm_train, role_precision_report,
                      tag_sequences, viterbi_decode, write_tagger_table)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


INPUT_ERRORS = (ConfigError, C.CorpusError, FileNotFoundError)


@contextlib.contextmanager
def stage(name: str):
    logger.info("[%s] start", name)
    try:
        yield
    except INPUT_ERRORS:
        raise
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    logger.info("[%s] done", name)


# ---------------------------------------------------------------------------
# configuration


def _from_dict(cls, data: dict | None, where: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = _SECTIONS.get((cls, f.name))
        kwargs[f.name] = _from_dict(sub, value, f"{where}.{f.name}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class CorpusSection:
    path: str | None = None
    format: str = "jsonl"
    test_path: str | None = None
    test_fraction: float = 0.2


@dataclass
class PreprocessSection:
    stopwords: str | list[str] | None = None  # None -> bundled list
    remove_stopwords: bool = True
    stemmer: str = "suffix"
    lowercase: bool = True

    def build(self) -> C.PreprocessConfig:
        if not self.remove_stopwords:
            words = frozenset()
        elif isinstance(self.stopwords, list):
            words = frozenset(self.stopwords)
        else:
            words = C.load_stopwords(self.stopwords)
        return C.PreprocessConfig(words, self.stemmer, self.lowercase)


@dataclass
class PhraseSection:
    modes: list[str] = field(default_factory=lambda: ["none"])
    delta: float = 5.0
    threshold: float = 1e-4
    passes: int = 1
    relations: str | None = None
    drop_stopword_bigrams: bool = False


@dataclass
class EmbeddingSection:
    dimension: int = 300
    min_count: int = 2
    pretrained: str | None = None
    window_radius: int = 5
    negative_samples: int = 5
    epochs: int = 5
    role_epochs: int | None = None
    learning_rate: float = 0.025
    subsample_threshold: float = 1e-3
    unigram_power: float = 0.75
    workers: int = 1

    def train_config(self, seed: int, deterministic: bool, role: bool = False) -> TrainConfig:
        epochs = self.role_epochs if role and self.role_epochs is not None else self.epochs
        return TrainConfig(window_radius=self.window_radius, negative_samples=self.negative_samples,
                           epochs=epochs, learning_rate=self.learning_rate,
                           subsample_threshold=self.subsample_threshold, seed=seed + (1 if role else 0),
                           unigram_power=self.unigram_power, workers=1 if deterministic else self.workers)


@dataclass
class DocvecSection:
    steps: int = 50
    learning_rate: float = 0.025
    negative_samples: int = 5


@dataclass
class RankingSection:
    representations: list[str] = field(default_factory=lambda: ["centroid"])
    radii: list[int] = field(default_factory=lambda: [5])
    contexts: list[str] = field(default_factory=lambda: ["sentence"])
    queries: list[str] = field(default_factory=lambda: ["TV"])
    kmax: int = 10
    docvec: DocvecSection = field(default_factory=DocvecSection)
    cache: bool = True


@dataclass
class CrfSection:
    l2: float = 1e-3
    method: str = "sgd"
    epochs: int = 15
    learning_rate: float = 0.5
    decay: float = 0.8
    batch_size: int = 16


@dataclass
class TaggingSection:
    taggers: list[str] = field(default_factory=lambda: ["hmm", "crf"])
    alpha_t: float = 0.1
    alpha_e: float = 0.1
    crf: CrfSection = field(default_factory=CrfSection)
    external: dict[str, str] = field(default_factory=dict)


@dataclass
class PipelineConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    phrases: PhraseSection = field(default_factory=PhraseSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    ranking: RankingSection = field(default_factory=RankingSection)
    tagging: TaggingSection = field(default_factory=TaggingSection)
    seed: int = 1
    deterministic: bool = True
    out: str = "runs/latest"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _from_dict(cls, data, "config")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if not self.corpus.path:
            raise ConfigError("corpus.path is required")
        for p in (self.corpus.path, self.corpus.test_path, self.phrases.relations, self.embedding.pretrained,
                  *self.tagging.external.values()):
            if p and not os.path.exists(p):
                raise ConfigError(f"referenced file does not exist: {p}")
        if isinstance(self.preprocess.stopwords, str) and not os.path.exists(self.preprocess.stopwords):
            raise ConfigError(f"referenced file does not exist: {self.preprocess.stopwords}")
        if self.corpus.format not in ("jsonl", "column"):
            raise ConfigError(f"corpus.format must be jsonl or column, not {self.corpus.format!r}")
        if not 0.0 <= self.corpus.test_fraction < 1.0:
            raise ConfigError("corpus.test_fraction must be in [0, 1)")
        for mode in self.phrases.modes:
            if mode not in ("none", "collocation", "relation"):
                raise ConfigError(f"unknown phrase mode {mode!r}")
            if mode == "relation" and not self.phrases.relations:
                raise ConfigError("phrase mode 'relation' needs phrases.relations")
        for kind in self.ranking.representations:
            if kind not in METHOD_NAMES:
                raise ConfigError(f"unknown representation {kind!r}")
        for level in self.ranking.contexts:
            if level not in ("sentence", "document"):
                raise ConfigError(f"unknown context level {level!r}")
        for q in self.ranking.queries:
            try:
                parse_query_kind(q)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if any(d < 1 for d in self.ranking.radii) or self.ranking.kmax < 1:
            raise ConfigError("radii and kmax must be >= 1")
        for t in self.tagging.taggers:
            if t not in ("hmm", "crf"):
                raise ConfigError(f"unknown tagger {t!r}")


_SECTIONS = {
    (PipelineConfig, "corpus"): CorpusSection,
    (PipelineConfig, "preprocess"): PreprocessSection,
    (PipelineConfig, "phrases"): PhraseSection,
    (PipelineConfig, "embedding"): EmbeddingSection,
    (PipelineConfig, "ranking"): RankingSection,
    (PipelineConfig, "tagging"): TaggingSection,
    (RankingSection, "docvec"): DocvecSection,
    (TaggingSection, "crf"): CrfSection,
}


def write_snapshot(cfg: PipelineConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.resolved.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared stages


def split_corpus(cfg: PipelineConfig) -> tuple[C.AnnotatedCorpus, C.AnnotatedCorpus]:
    """Train/test split: explicit test file, or a seeded split of documents."""
    corpus = C.load_corpus(cfg.corpus.path, cfg.corpus.format)
    if cfg.corpus.test_path:
        return corpus, C.load_corpus(cfg.corpus.test_path, cfg.corpus.format)
    n_test = int(round(cfg.corpus.test_fraction * len(corpus)))
    rng = np.random.default_rng([cfg.seed, 104729])
    test_idx = set(rng.permutation(len(corpus))[:n_test].tolist())
    ids = [d.id for d in corpus]
    train = corpus.subset([ids[i] for i in range(len(ids)) if i not in test_idx])
    test = corpus.subset([ids[i] for i in range(len(ids)) if i in test_idx])
    return train, test


def build_phrase_table(cfg: PipelineConfig, mode: str, corpus: C.AnnotatedCorpus) -> PhraseTable | None:
    if mode == "none":
        return None
    if mode == "collocation":
        pc = PhraseConfig(cfg.phrases.delta, cfg.phrases.threshold, cfg.phrases.passes,
                          cfg.phrases.drop_stopword_bigrams, cfg.preprocess.build().stopwords)
        return collocation_scores(corpus_token_rows(corpus), pc)
    return load_relation_phrases(cfg.phrases.relations, cfg.preprocess.build())


def train_word_model(cfg: PipelineConfig, corpus: C.AnnotatedCorpus) -> EmbeddingModel:
    e = cfg.embedding
    sents = C.sentence_stream(corpus)
    vocab = build_vocab(itertools.chain.from_iterable(sents), e.min_count)
    model = EmbeddingModel.random(vocab, e.dimension, cfg.seed)
    if e.pretrained:
        model = init_pretrained(model, e.pretrained)
    return train_skipgram(model, sents, e.train_config(cfg.seed, cfg.deterministic))


@dataclass
class PreparedModels:
    mode: str
    train: C.AnnotatedCorpus
    test: C.AnnotatedCorpus
    word_model: EmbeddingModel
    role_model: EmbeddingModel
    phrases: PhraseTable | None


def prepare(cfg: PipelineConfig, mode: str, train: C.AnnotatedCorpus, test: C.AnnotatedCorpus,
            reuse_dir: str | None = None) -> PreparedModels:
    pcfg = cfg.preprocess.build()
    with stage("preprocess"):
        train_p, test_p = C.preprocess(train, pcfg), C.preprocess(test, pcfg)
    with stage(f"phrases:{mode}"):
        table = build_phrase_table(cfg, mode, C.AnnotatedCorpus(train_p.documents + test_p.documents))
        if table is not None:
            train_p = merge_phrases(train_p, table, cfg.phrases.passes)
            test_p = merge_phrases(test_p, table, cfg.phrases.passes)
            logger.info("%d %s phrases", len(table), mode)
    word_path = role_path = None
    if reuse_dir:
        word_path = os.path.join(reuse_dir, f"{mode}-word.bin")
        role_path = os.path.join(reuse_dir, f"{mode}-role.bin")
    with stage(f"embed:{mode}"):
        if word_path and os.path.exists(word_path):
            word = load_model(word_path)
        else:
            word = train_word_model(cfg, C.AnnotatedCorpus(train_p.documents + test_p.documents))
    with stage(f"roles:{mode}"):
        if role_path and os.path.exists(role_path):
            role = load_model(role_path)
        else:
            role = learn_role_vectors(train_p, word,
                                      cfg.embedding.train_config(cfg.seed, cfg.deterministic, role=True),
                                      unlabelled=test_p)
    return PreparedModels(mode, train_p, test_p, word, role, table)


# ---------------------------------------------------------------------------
# ranking


def method_name(kind: str, d: int, query: str, level: str, mode: str) -> str:
    name = f"{METHOD_NAMES[kind]}-N{d}/{query}"
    if level != "sentence":
        name += f"/{level}"
    if mode != "none":
        name += f"/{mode}"
    return name


def _slug(name: str) -> str:
    return name.replace("/", "__")


def random_baseline(lists) -> float:
    """Expected AP@1 of a uniformly random ranking: mean of R / list length."""
    vals = [rl.n_relevant / len(rl.items) for rl in lists if rl.n_relevant]
    return float(np.mean(vals)) if vals else float("nan")


def rank_variants(cfg: PipelineConfig, prepared: PreparedModels, cache: RepresentationCache | None = None
                  ) -> list[RankingReport]:
    r = cfg.ranking
    test, model = prepared.test, prepared.role_model
    dv = DocvecConfig(steps=r.docvec.steps, learning_rate=r.docvec.learning_rate,
                      negative_samples=r.docvec.negative_samples, seed=cfg.seed)
    c_hash = corpus_digest(test) if cache else None
    m_hash = model_digest(model) if cache else None
    queries = {}
    for qk in r.queries:
        for role in C.IN_STUDY_ROLES:
            queries[(qk, role)] = build_role_query(model, role, qk)
    reports = []
    for kind, d, level in itertools.product(r.representations, r.radii, r.contexts):
        with stage(f"represent:{kind}-N{d}-{level}"):
            if cache:
                reps = cache.get_or_build(test, model, kind, level, d, dv, c_hash, m_hash)
            else:
                reps = build_representations(test, model, kind, level, d, dv)
        for qk in r.queries:
            name = method_name(kind, d, qk, level, prepared.mode)
            with stage(f"rank:{name}"):
                lists = [rank_entities(reps.items, queries[(qk, role)], doc)
                         for doc in test for role in C.IN_STUDY_ROLES]
                rep = evaluate_rankings(lists, r.kmax, name, reps.n_unrankable)
                rep.extra.update({
                    "random_baseline_map1": random_baseline(lists),
                    "representation": kind, "radius": d, "context": level, "query": qk,
                    "phrase_mode": prepared.mode,
                    "context_tokens": reps.n_context, "oov_context_tokens": reps.n_oov,
                })
                reports.append(rep)
                logger.info("%s mAP@1=%.4f mAP@5=%.4f", name, rep.map_at(1), rep.map_at(min(5, r.kmax)))
    return reports


def run_ranking(cfg: PipelineConfig, reuse_models: bool = False) -> list[RankingReport]:
    cfg.validate()
    out = cfg.out
    write_snapshot(cfg, out)
    with stage("load"):
        train, test = split_corpus(cfg)
    cache = RepresentationCache(os.path.join(out, "cache")) if cfg.ranking.cache else None
    model_dir = os.path.join(out, "models")
    os.makedirs(model_dir, exist_ok=True)
    reports: list[RankingReport] = []
    for mode in cfg.phrases.modes:
        prepared = prepare(cfg, mode, train, test, model_dir if reuse_models else None)
        save_model(prepared.word_model, os.path.join(model_dir, f"{mode}-word.bin"))
        save_model(prepared.role_model, os.path.join(model_dir, f"{mode}-role.bin"))
        if prepared.phrases is not None:
            prepared.phrases.save(os.path.join(out, f"phrases-{mode}.tsv"))
        reports += rank_variants(cfg, prepared, cache)
    with stage("report"):
        write_ranking_outputs(cfg, reports)
    return reports


def run_embed(cfg: PipelineConfig) -> dict[str, PreparedModels]:
    """Train and save word and role models for every phrase mode."""
    cfg.validate()
    write_snapshot(cfg, cfg.out)
    with stage("load"):
        train, test = split_corpus(cfg)
    model_dir = os.path.join(cfg.out, "models")
    os.makedirs(model_dir, exist_ok=True)
    out = {}
    for mode in cfg.phrases.modes:
        prepared = prepare(cfg, mode, train, test)
        save_model(prepared.word_model, os.path.join(model_dir, f"{mode}-word.bin"))
        save_model(prepared.role_model, os.path.join(model_dir, f"{mode}-role.bin"))
        if prepared.phrases is not None:
            prepared.phrases.save(os.path.join(cfg.out, f"phrases-{mode}.tsv"))
        out[mode] = prepared
    return out


def run_represent(cfg: PipelineConfig) -> dict[tuple, int]:
    """Fill the representation cache, reusing saved models where present.

    Returns the number of unrankable mentions per (mode, kind, radius, level).
    """
    cfg.validate()
    write_snapshot(cfg, cfg.out)
    with stage("load"):
        train, test = split_corpus(cfg)
    model_dir = os.path.join(cfg.out, "models")
    cache = RepresentationCache(os.path.join(cfg.out, "cache"))
    r = cfg.ranking
    dv = DocvecConfig(steps=r.docvec.steps, learning_rate=r.docvec.learning_rate,
                      negative_samples=r.docvec.negative_samples, seed=cfg.seed)
    counts = {}
    for mode in cfg.phrases.modes:
        prepared = prepare(cfg, mode, train, test, model_dir)
        for kind, d, level in itertools.product(r.representations, r.radii, r.contexts):
            with stage(f"represent:{kind}-N{d}-{level}"):
                reps = cache.get_or_build(prepared.test, prepared.role_model, kind, level, d, dv)
            counts[(mode, kind, d, level)] = reps.n_unrankable
    return counts


def write_ranking_outputs(cfg: PipelineConfig, reports: list[RankingReport]) -> None:
    out = cfg.out
    rdir = os.path.join(out, "reports")
    kk = min(5, cfg.ranking.kmax)
    for rep in reports:
        rep.write(rdir, _slug(rep.method))
    write_comparison(reports, os.path.join(out, "comparison.csv"), kk)

    def pick(**kw):
        return [r for r in reports if all(r.extra[k] == v for k, v in kw.items())]

    kind0, d0, q0 = cfg.ranking.representations[0], cfg.ranking.radii[0], cfg.ranking.queries[0]
    if len(cfg.phrases.modes) > 1:
        level = "sentence" if "sentence" in cfg.ranking.contexts else cfg.ranking.contexts[0]
        rows = pick(representation=kind0, radius=d0, query=q0, context=level)
        write_comparison(rows, os.path.join(out, "phrase_comparison.csv"), kk)
    if len(cfg.ranking.contexts) > 1:
        for mode in cfg.phrases.modes:
            rows = pick(representation=kind0, radius=d0, query=q0, phrase_mode=mode)
            write_comparison(rows, os.path.join(out, f"context_comparison_{mode}.csv"), kk)
    summary = {
        "seed": cfg.seed,
        "methods": {r.method: {"map": r.curve, "random_baseline_map1": r.extra["random_baseline_map1"],
                               "n_queries": r.n_queries, "n_excluded_queries": r.n_excluded,
                               "n_unrankable_mentions": r.n_unrankable} for r in reports},
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# tagging


def write_predictions(path, corpus: C.AnnotatedCorpus, predictions: list[list[str]]) -> None:
    it = iter(predictions)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus:
            fh.write(f"-DOCSTART- {doc.id}\n\n")
            for sent in doc.sentences:
                tags = next(it)
                for tok, tag in zip(sent, tags):
                    fh.write(f"{tok.surface}\t{tag}\n")
                fh.write("\n")


def read_predictions(path) -> list[list[str]]:
    return [[t for _, t, _ in sent] for _, sents in C.read_column(path) for sent in sents]


def run_tagging(cfg: PipelineConfig) -> dict[str, Any]:
    cfg.validate()
    out = cfg.out
    write_snapshot(cfg, out)
    t = cfg.tagging
    with stage("load"):
        train, test = split_corpus(cfg)
        train_seqs = [list(zip(toks, tags)) for toks, tags in tag_sequences(train)]
        test_seqs = tag_sequences(test)
        gold = [tags for _, tags in test_seqs]
    reports = []
    for name in t.taggers:
        with stage(f"tag:{name}"):
            if name == "hmm":
                model = hmm_train(train_seqs, t.alpha_t, t.alpha_e)
                pred = [viterbi_decode(model, toks) for toks, _ in test_seqs]
                label = "HMM"
            else:
                opt = OptimizerConfig(t.crf.method, t.crf.epochs, t.crf.learning_rate, t.crf.decay,
                                      t.crf.batch_size, cfg.seed)
                model = crf_train(train_seqs, FeatureTemplate(), t.crf.l2, opt)
                pred = [crf_decode(model, toks) for toks, _ in test_seqs]
                label = "CRF"
            write_predictions(os.path.join(out, f"predictions-{name}.column"), test, pred)
            reports.append(role_precision_report(gold, pred, label))
    for label, path in sorted(t.external.items()):
        with stage(f"external:{label}"):
            reports.append(role_precision_report(gold, read_predictions(path), label))
    with stage("report"):
        write_tagger_table(reports, out)
    return {r.system: r for r in reports}


# ---------------------------------------------------------------------------
# statistics


def run_stats(corpus_path: str, fmt: str, out: str) -> C.StatisticsReport:
    corpus = C.load_corpus(corpus_path, fmt)
    report = C.mention_statistics(corpus)
    report.write(out)
    return report
