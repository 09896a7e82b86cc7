"""Bigram phrases: collocation scoring, relation-phrase ingestion and corpus rewriting.

Collocations use the count-discount score
``(count(ab) - delta) / (count(a) * count(b))``.  The acceptance threshold is
expressed per million tokens (``score * N / 1e6``), so ``1e-4`` corresponds to
the usual word2phrase cut-off of 100 on ``score * N``.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import AnnotatedCorpus, Document, EntityMention, PreprocessConfig, Token

logger = logging.getLogger(__name__)

COLLOCATION = "collocation"
RELATION = "relation"


@dataclass(frozen=True)
class PhraseEntry:
    score: float
    source: str


@dataclass
class PhraseTable:
    entries: dict[tuple[str, str], PhraseEntry] = field(default_factory=dict)
    joiner: str = "_"
    skipped_rows: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, pair) -> bool:
        return pair in self.entries

    def __getitem__(self, pair) -> PhraseEntry:
        return self.entries[pair]

    def join(self, pair: tuple[str, str]) -> str:
        return self.joiner.join(pair)

    def phrases(self) -> list[str]:
        return [self.join(p) for p in self.entries]

    def ranked(self) -> list[tuple[tuple[str, str], PhraseEntry]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1].score, kv[0]))

    def update(self, other: "PhraseTable") -> "PhraseTable":
        """Union; entries of ``other`` win on conflict."""
        merged = dict(self.entries)
        merged.update(other.entries)
        return PhraseTable(merged, self.joiner, self.skipped_rows + other.skipped_rows)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for (a, b), e in self.ranked():
                w.writerow([f"{a} {b}", repr(float(e.score)), e.source])

    @classmethod
    def load(cls, path, joiner: str = "_") -> "PhraseTable":
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
                if len(row) != 3 or len(row[0].split(" ")) != 2:
                    raise ValueError(f"line {lineno}: expected 'a b<TAB>score<TAB>source'")
                a, b = row[0].split(" ")
                entries[(a, b)] = PhraseEntry(float(row[1]), row[2])
        return cls(entries, joiner)


@dataclass(frozen=True)
class PhraseConfig:
    delta: float = 5.0
    threshold: float = 1e-4
    passes: int = 1
    drop_stopword_bigrams: bool = False
    stopwords: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


def count_ngrams(sentences: Iterable[Sequence[str]]) -> tuple[Counter, Counter, int]:
    """Unigram and within-sentence bigram counts.

    Empty strings mark removed tokens: they are not counted and break
    adjacency.
    """
    uni, bi = Counter(), Counter()
    for sent in sentences:
        prev = ""
        for tok in sent:
            if tok:
                uni[tok] += 1
                if prev:
                    bi[(prev, tok)] += 1
            prev = tok
    return uni, bi, sum(uni.values())


def collocation_score(n_ab: int, n_a: int, n_b: int, delta: float) -> float:
    """Discounted association ``(n_ab - delta) / (n_a * n_b)``."""
    return (n_ab - delta) / (n_a * n_b)


def collocation_scores(sentences: Iterable[Sequence[str]], cfg: PhraseConfig = PhraseConfig()) -> PhraseTable:
    uni, bi, total = count_ngrams(sentences)
    table = {}
    for (a, b), n_ab in bi.items():
        if n_ab <= cfg.delta:
            continue
        if cfg.drop_stopword_bigrams and (a in cfg.stopwords or b in cfg.stopwords):
            continue
        score = collocation_score(n_ab, uni[a], uni[b], cfg.delta)
        if score * total / 1e6 >= cfg.threshold:
            table[(a, b)] = PhraseEntry(score, COLLOCATION)
    return PhraseTable(table)


def corpus_token_rows(corpus: AnnotatedCorpus) -> list[list[str]]:
    """Normalized tokens per sentence, with removed tokens kept as ``""`` gaps."""
    return [[t.normalized for t in sent] for doc in corpus for sent in doc.sentences]


def load_relation_phrases(path, cfg: PreprocessConfig | None = None) -> PhraseTable:
    """Read ``doc_id<TAB>subject<TAB>relation<TAB>object`` tuples.

    Each adjacent token pair of a relation becomes a phrase scored by its
    occurrence count.  Stopwords inside relations are kept so pairs like
    "was attacked" survive.  Malformed rows are skipped and counted.
    """
    counts: Counter = Counter()
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4 or not parts[2].strip():
                skipped += 1
                continue
            words = parts[2].split()
            norm = [cfg.normalize(w, keep_stopwords=True) if cfg else w.lower() for w in words]
            for a, b in zip(norm, norm[1:]):
                if a and b:
                    counts[(a, b)] += 1
    if skipped:
        logger.warning("%s: skipped %d malformed relation rows", path, skipped)
    table = PhraseTable({p: PhraseEntry(float(c), RELATION) for p, c in counts.items()})
    table.skipped_rows = skipped
    return table


def _merge_sentence(tokens: Sequence[Token], owner: Sequence[int], table: PhraseTable, si: int):
    """Greedy left-to-right merge; returns new tokens and old->new index map."""
    out, index_map = [], []
    i = 0
    n = len(tokens)
    while i < n:
        a = tokens[i]
        if i + 1 < n:
            b = tokens[i + 1]
            if (a.normalized and b.normalized and owner[i] == owner[i + 1]
                    and (a.normalized, b.normalized) in table):
                j = len(out)
                out.append(Token(table.join((a.surface, b.surface)),
                                 table.join((a.normalized, b.normalized)), si, j))
                index_map += [j, j]
                i += 2
                continue
        index_map.append(len(out))
        out.append(Token(a.surface, a.normalized, si, len(out)))
        i += 1
    return out, index_map


def merge_phrases(corpus: AnnotatedCorpus, table: PhraseTable, passes: int = 1) -> AnnotatedCorpus:
    """Rewrite matched bigrams as single tokens and re-index mention spans.

    A merge never joins a token inside a mention with one outside it (or in
    a different mention); two tokens of the same mention may merge.
    """
    docs = []
    for doc in corpus:
        sents = [list(s) for s in doc.sentences]
        mentions = list(doc.mentions)
        for _ in range(passes):
            new_sents = []
            maps = []
            for si, sent in enumerate(sents):
                owner = [-1] * len(sent)
                for mi, m in enumerate(mentions):
                    if m.sentence == si:
                        for k in range(m.start, m.end + 1):
                            owner[k] = mi
                merged, index_map = _merge_sentence(sent, owner, table, si)
                new_sents.append(merged)
                maps.append(index_map)
            mentions = [EntityMention(m.document_id, m.entity_key, m.sentence, maps[m.sentence][m.start],
                                      maps[m.sentence][m.end], m.role, m.mention_ordinal) for m in mentions]
            sents = new_sents
        docs.append(Document(doc.id, tuple(tuple(s) for s in sents), tuple(mentions)))
    return AnnotatedCorpus(tuple(docs))


def split_phrases(tokens: Iterable[str], joiner: str = "_") -> list[str]:
    return [part for t in tokens for part in t.split(joiner)]
