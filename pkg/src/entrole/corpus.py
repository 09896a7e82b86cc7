"""Annotated corpora: data model, readers/writers, preprocessing and mention statistics.

Two on-disk formats are supported:

* ``jsonl`` -- one document per line::

    {"id": "d1", "sentences": [["ISIS", "claimed", ...], ...],
     "mentions": [{"entity": "isis", "sent": 0, "start": 0, "end": 0, "role": "ORG_Accused"}]}

* ``column`` -- CoNLL style ``SURFACE<TAB>BIO`` lines, blank line between
  sentences and ``-DOCSTART- <id>`` between documents.  The column format has
  no coreference, so every contiguous span becomes its own entity.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)


class RoleLabel(str, Enum):
    PER_Victim = "PER_Victim"
    PER_Accused = "PER_Accused"
    PER_Others = "PER_Others"
    ORG_Victim = "ORG_Victim"
    ORG_Accused = "ORG_Accused"
    ORG_Others = "ORG_Others"
    LOC_Event = "LOC_Event"
    LOC_Accused = "LOC_Accused"
    LOC_Victim = "LOC_Victim"
    LOC_Others = "LOC_Others"

    @property
    def in_study(self) -> bool:
        return self in IN_STUDY_ROLES

    @property
    def coarse_type(self) -> str:
        return self.value.split("_", 1)[0]

    @property
    def token(self) -> str:
        """Synthetic token that stands in for a mention of this role."""
        return f"<{self.value}>"

    def __str__(self) -> str:
        return self.value


# Evaluation subset; *_Others and LOC_Victim stay in the corpus as context only.
IN_STUDY_ROLES = (
    RoleLabel.PER_Victim,
    RoleLabel.PER_Accused,
    RoleLabel.ORG_Victim,
    RoleLabel.ORG_Accused,
    RoleLabel.LOC_Event,
    RoleLabel.LOC_Accused,
)

ROLE_TOKENS = frozenset(r.token for r in RoleLabel)


class CorpusError(ValueError):
    """Base class for malformed corpus input."""


class CorpusFormatError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SpanError(CorpusError):
    def __init__(self, message: str, document_id: str, line: int | None = None):
        self.document_id = document_id
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}document {document_id!r}: {message}")


class UnknownRoleError(CorpusError):
    def __init__(self, role: str, line: int | None = None):
        self.role = role
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}unknown role label {role!r}")


def parse_role(value: str, line: int | None = None) -> RoleLabel:
    try:
        return RoleLabel(value)
    except ValueError:
        raise UnknownRoleError(value, line) from None


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str
    sentence_index: int
    token_index: int


@dataclass(frozen=True)
class EntityMention:
    document_id: str
    entity_key: str
    sentence: int
    start: int
    end: int  # inclusive
    role: RoleLabel
    mention_ordinal: int = 0

    @property
    def span(self) -> tuple[int, int, int]:
        return (self.sentence, self.start, self.end)

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[tuple[Token, ...], ...]
    mentions: tuple[EntityMention, ...]

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def mentions_of(self, entity_key: str) -> list[EntityMention]:
        return [m for m in self.mentions if m.entity_key == entity_key]

    def entity_keys(self) -> list[str]:
        """Distinct entity keys in order of first mention."""
        return list(dict.fromkeys(m.entity_key for m in self.mentions))

    def mention_tokens(self, mention: EntityMention) -> tuple[Token, ...]:
        return self.sentences[mention.sentence][mention.start:mention.end + 1]


@dataclass(frozen=True)
class AnnotatedCorpus:
    documents: tuple[Document, ...]
    _index: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self._index.update((d.id, i) for i, d in enumerate(self.documents))

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def document(self, document_id: str) -> Document:
        return self.documents[self._index[document_id]]

    @property
    def role_frequencies(self) -> dict[RoleLabel, int]:
        counts = Counter(m.role for d in self.documents for m in d.mentions)
        return {r: counts.get(r, 0) for r in RoleLabel}

    def mentions(self) -> Iterator[EntityMention]:
        for d in self.documents:
            yield from d.mentions

    def subset(self, document_ids: Iterable[str]) -> "AnnotatedCorpus":
        return AnnotatedCorpus(tuple(self.document(i) for i in document_ids))


def build_document(document_id: str, sentences: Sequence[Sequence[str]],
                   raw_mentions: Iterable[tuple[str, int, int, int, RoleLabel]],
                   line: int | None = None) -> Document:
    """Validate spans and assign mention ordinals.

    ``raw_mentions`` holds ``(entity_key, sent, start, end, role)`` tuples.
    Malformed spans raise :class:`SpanError`; nothing is repaired.
    """
    toks = tuple(
        tuple(Token(str(w), str(w), si, ti) for ti, w in enumerate(sent))
        for si, sent in enumerate(sentences)
    )
    spans = []
    for key, si, start, end, role in raw_mentions:
        if not (isinstance(si, int) and isinstance(start, int) and isinstance(end, int)):
            raise SpanError("span indices must be integers", document_id, line)
        if not 0 <= si < len(toks):
            raise SpanError(f"sentence index {si} out of range", document_id, line)
        if end < start:
            raise SpanError(f"end {end} < start {start}", document_id, line)
        if start < 0 or end >= len(toks[si]):
            raise SpanError(f"span [{start}, {end}] out of range for sentence {si} "
                            f"of length {len(toks[si])}", document_id, line)
        spans.append((si, start, end, str(key), role))
    spans.sort(key=lambda s: (s[0], s[1], s[2]))
    for a, b in zip(spans, spans[1:]):
        if a[0] == b[0] and b[1] <= a[2]:
            raise SpanError(f"overlapping spans in sentence {a[0]}: "
                            f"[{a[1]}, {a[2]}] and [{b[1]}, {b[2]}]", document_id, line)
    ordinals: Counter = Counter()
    mentions = []
    for si, start, end, key, role in spans:
        mentions.append(EntityMention(document_id, key, si, start, end, role, ordinals[key]))
        ordinals[key] += 1
    return Document(document_id, toks, tuple(mentions))


# ---------------------------------------------------------------------------
# reading / writing


def _read_jsonl(path) -> AnnotatedCorpus:
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError("expected a JSON object", lineno)
            try:
                doc_id = str(obj["id"])
                sentences = obj["sentences"]
                raw = obj.get("mentions", [])
                if not isinstance(sentences, list) or not all(isinstance(s, list) for s in sentences):
                    raise CorpusFormatError("'sentences' must be a list of token lists", lineno)
                mentions = [(m["entity"], m["sent"], m["start"], m["end"], parse_role(m["role"], lineno))
                            for m in raw]
            except KeyError as exc:
                raise CorpusFormatError(f"missing field {exc.args[0]!r}", lineno) from None
            except TypeError:
                raise CorpusFormatError("malformed mention record", lineno) from None
            if doc_id in seen:
                raise CorpusFormatError(f"duplicate document id {doc_id!r}", lineno)
            seen.add(doc_id)
            docs.append(build_document(doc_id, sentences, mentions, lineno))
    return AnnotatedCorpus(tuple(docs))


def bio_to_spans(tags: Sequence[str], strict: bool = True, line: int | None = None,
                 document_id: str = "") -> tuple[list[tuple[int, int, str]], int]:
    """Decode BIO tags into ``(start, end, label)`` spans.

    With ``strict`` a dangling ``I-X`` (after ``O`` or a different label) is an
    error; otherwise it is repaired into ``B-X``.  Returns spans and the
    number of repairs made.
    """
    spans = []
    repairs = 0
    cur = None
    for i, tag in enumerate(tags):
        if tag == "O":
            if cur:
                spans.append(tuple(cur))
            cur = None
            continue
        prefix, _, label = tag.partition("-")
        if prefix not in ("B", "I") or not label:
            raise CorpusFormatError(f"malformed BIO tag {tag!r}", line)
        if prefix == "I" and cur is not None and cur[2] == label:
            cur[1] = i
            continue
        if prefix == "I":
            if strict:
                raise SpanError(f"I-{label} at token {i} does not continue a span", document_id, line)
            repairs += 1
        if cur:
            spans.append(tuple(cur))
        cur = [i, i, label]
    if cur:
        spans.append(tuple(cur))
    return spans, repairs


def spans_to_bio(n: int, spans: Iterable[tuple[int, int, str]]) -> list[str]:
    tags = ["O"] * n
    for start, end, label in spans:
        tags[start] = f"B-{label}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{label}"
    return tags


def read_column(path) -> list[tuple[str, list[list[tuple[str, str, int]]]]]:
    """Raw column reader: ``[(doc_id, [[(surface, tag, lineno), ...], ...]), ...]``."""
    docs: list = []
    sent: list = []

    def flush():
        if sent:
            if not docs:
                docs.append(("doc0", []))
            docs[-1][1].append(list(sent))
            sent.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if line.startswith("-DOCSTART-"):
                flush()
                doc_id = line[len("-DOCSTART-"):].strip() or f"doc{len(docs)}"
                docs.append((doc_id, []))
                continue
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise CorpusFormatError("expected 'SURFACE<TAB>TAG'", lineno)
            sent.append((parts[0], parts[1].strip(), lineno))
    flush()
    return docs


def _read_column(path) -> AnnotatedCorpus:
    docs = []
    seen = set()
    for doc_id, sents in read_column(path):
        if doc_id in seen:
            raise CorpusFormatError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        mentions = []
        for si, sent in enumerate(sents):
            line = sent[0][2] if sent else None
            spans, _ = bio_to_spans([t for _, t, _ in sent], strict=True, line=line, document_id=doc_id)
            for start, end, label in spans:
                mentions.append((f"s{si}t{start}", si, start, end, parse_role(label, sent[start][2])))
        docs.append(build_document(doc_id, [[w for w, _, _ in s] for s in sents], mentions))
    return AnnotatedCorpus(tuple(docs))


def load_corpus(path, format: str = "jsonl") -> AnnotatedCorpus:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if format == "jsonl":
        return _read_jsonl(path)
    if format == "column":
        return _read_column(path)
    raise ValueError(f"unknown corpus format {format!r}")


def document_to_json(doc: Document) -> dict:
    return {
        "id": doc.id,
        "sentences": [[t.surface for t in s] for s in doc.sentences],
        "mentions": [{"entity": m.entity_key, "sent": m.sentence, "start": m.start,
                      "end": m.end, "role": m.role.value} for m in doc.mentions],
    }


def save_corpus(corpus: AnnotatedCorpus, path, format: str = "jsonl") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if format == "jsonl":
            for doc in corpus:
                fh.write(json.dumps(document_to_json(doc), ensure_ascii=False) + "\n")
        elif format == "column":
            for doc in corpus:
                fh.write(f"-DOCSTART- {doc.id}\n\n")
                by_sent = defaultdict(list)
                for m in doc.mentions:
                    by_sent[m.sentence].append((m.start, m.end, m.role.value))
                for si, sent in enumerate(doc.sentences):
                    tags = spans_to_bio(len(sent), by_sent[si])
                    for tok, tag in zip(sent, tags):
                        fh.write(f"{tok.surface}\t{tag}\n")
                    fh.write("\n")
        else:
            raise ValueError(f"unknown corpus format {format!r}")


def convert_corpus(src, dst, src_format: str, dst_format: str) -> AnnotatedCorpus:
    corpus = load_corpus(src, src_format)
    save_corpus(corpus, dst, dst_format)
    return corpus


# ---------------------------------------------------------------------------
# preprocessing

_SUFFIXES = ("ingly", "edly", "ing", "ies", "ied", "ed", "es", "ly", "s")


def suffix_stem(word: str) -> str:
    """Strip one common inflectional suffix, keeping a stem of at least 3 chars."""
    for suf in _SUFFIXES:
        if not word.endswith(suf) or len(word) - len(suf) < 3:
            continue
        stem = word[:-len(suf)]
        if suf in ("ies", "ied"):
            return stem + "y"
        if suf == "s" and stem[-1] in "sui":
            return word
        if suf == "es" and stem[-1] not in "sxzh":
            # "uses" -> "use", "boxes" -> "box"
            return word[:-1]
        return stem
    return word


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("entrole").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


@dataclass(frozen=True)
class PreprocessConfig:
    stopwords: frozenset[str] = frozenset()
    stemmer: str = "suffix"
    lowercase: bool = True

    def __post_init__(self):
        if self.stemmer not in ("none", "suffix"):
            raise ValueError(f"unknown stemmer {self.stemmer!r}")
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))

    @classmethod
    def default(cls) -> "PreprocessConfig":
        return cls(stopwords=load_stopwords())

    def normalize(self, surface: str, keep_stopwords: bool = False) -> str:
        word = surface.lower() if self.lowercase else surface
        if not keep_stopwords and (word in self.stopwords or surface in self.stopwords):
            return ""
        if self.stemmer == "suffix":
            word = suffix_stem(word)
        return word


def preprocess(corpus: AnnotatedCorpus, cfg: PreprocessConfig) -> AnnotatedCorpus:
    """Fill ``Token.normalized``.  Tokens inside mention spans are never removed."""
    docs = []
    for doc in corpus:
        inside = {(m.sentence, i) for m in doc.mentions for i in range(m.start, m.end + 1)}
        sents = tuple(
            tuple(Token(t.surface, cfg.normalize(t.surface, (si, t.token_index) in inside), si, t.token_index)
                  for t in sent)
            for si, sent in enumerate(doc.sentences)
        )
        docs.append(Document(doc.id, sents, doc.mentions))
    return AnnotatedCorpus(tuple(docs))


def sentence_stream(corpus: AnnotatedCorpus) -> list[list[str]]:
    """Normalized tokens per sentence, removed tokens dropped."""
    return [[t.normalized for t in sent if t.normalized] for doc in corpus for sent in doc.sentences]


def substitute_roles(corpus: AnnotatedCorpus) -> list[list[str]]:
    """Rewrite every mention span as its role token.

    Returned per sentence (document and sentence order preserved); chain the
    lists for a flat stream.
    """
    out = []
    for doc in corpus:
        starts = {(m.sentence, m.start): m for m in doc.mentions}
        for si, sent in enumerate(doc.sentences):
            toks = []
            i = 0
            while i < len(sent):
                m = starts.get((si, i))
                if m is not None:
                    toks.append(m.role.token)
                    i = m.end + 1
                    continue
                if sent[i].normalized:
                    toks.append(sent[i].normalized)
                i += 1
            out.append(toks)
    return out


# ---------------------------------------------------------------------------
# mention statistics


def majority_role(roles: Sequence[RoleLabel]) -> RoleLabel:
    """Most frequent role; ties go to the role that occurs first."""
    counts = Counter(roles)
    best = max(counts.values())
    return next(r for r in roles if counts[r] == best)


@dataclass
class StatisticsReport:
    n_entities: int
    n_multi_mention: int
    multi_mention_fraction: float
    mention_histogram: dict[int, int]
    majority_share: float
    majority_share_multi: float | None
    majority_share_by_count: dict[int, float]
    first_mention_majority: float
    first_mention_majority_multi: float | None
    first_mention_majority_by_role: dict[str, float]

    def to_json(self) -> dict:
        return {
            "n_entities": self.n_entities,
            "n_multi_mention": self.n_multi_mention,
            "multi_mention_fraction": self.multi_mention_fraction,
            "mention_histogram": {str(k): v for k, v in self.mention_histogram.items()},
            "majority_share": self.majority_share,
            "majority_share_multi": self.majority_share_multi,
            "majority_share_by_count": {str(k): v for k, v in self.majority_share_by_count.items()},
            "first_mention_majority": self.first_mention_majority,
            "first_mention_majority_multi": self.first_mention_majority_multi,
            "first_mention_majority_by_role": self.first_mention_majority_by_role,
        }

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "mention_histogram.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mentions", "entities"])
            for k, v in self.mention_histogram.items():
                w.writerow([k, v])
        with open(os.path.join(out_dir, "majority_share.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mentions", "majority_share_pct"])
            for k, v in self.majority_share_by_count.items():
                w.writerow([k, f"{100 * v:.4f}"])
        with open(os.path.join(out_dir, "positional.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["majority_role", "first_mention_majority_pct"])
            for k, v in self.first_mention_majority_by_role.items():
                w.writerow([k, f"{100 * v:.4f}"])


def _mean(xs):
    return sum(xs) / len(xs) if xs else None


def mention_statistics(corpus: AnnotatedCorpus) -> StatisticsReport:
    """Multi-mention, majority-role and first-mention statistics per (document, entity).

    Singleton entities count as 100% majority and first-mention-majority; the
    ``*_multi`` fields exclude them.
    """
    shares, firsts, counts = [], [], []
    by_count = defaultdict(list)
    by_role = defaultdict(list)
    for doc in corpus:
        groups = defaultdict(list)
        for m in doc.mentions:
            groups[m.entity_key].append(m)
        for ms in groups.values():
            ms.sort(key=lambda m: m.mention_ordinal)
            roles = [m.role for m in ms]
            maj = majority_role(roles)
            share = sum(r == maj for r in roles) / len(roles)
            first = roles[0] == maj
            shares.append(share)
            firsts.append(first)
            counts.append(len(roles))
            by_count[len(roles)].append(share)
            by_role[maj.value].append(first)
    n = len(counts)
    multi = [i for i, c in enumerate(counts) if c >= 2]
    ms_multi = _mean([shares[i] for i in multi])
    fm_multi = _mean([float(firsts[i]) for i in multi])
    return StatisticsReport(
        n_entities=n,
        n_multi_mention=len(multi),
        multi_mention_fraction=len(multi) / n if n else 0.0,
        mention_histogram=dict(sorted(Counter(counts).items())),
        majority_share=_mean(shares) if n else 1.0,
        majority_share_multi=ms_multi,
        majority_share_by_count={k: _mean(v) for k, v in sorted(by_count.items())},
        first_mention_majority=_mean([float(f) for f in firsts]) if n else 1.0,
        first_mention_majority_multi=fm_multi,
        first_mention_majority_by_role={k: _mean([float(x) for x in v]) for k, v in sorted(by_role.items())},
    )


def role_frequency_table(corpus: AnnotatedCorpus) -> str:
    freqs = corpus.role_frequencies
    width = max(len(r.value) for r in RoleLabel)
    lines = [f"{'Entity Role':<{width}}  Frequency"]
    lines += [f"{r.value:<{width}}  {freqs[r]}" for r in RoleLabel]
    return "\n".join(lines)
