"""Synthetic annotated corpora with planted role cues and mention statistics.

Every document is a set of entities, each with a majority role and a number
of mentions.  Each mention gets its own sentence made of filler words plus,
at the signal rate, a cue phrase for the mention's role placed right before
or after the entity.  The generator plans all entity-level quantities first
(mention counts, minority mentions, first-mention violations) with
error-diffusion so that realized rates track the targets closely, and records
the realized values as ground truth.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import AnnotatedCorpus, RoleLabel, build_document

DEFAULT_CUES: dict[str, list[str]] = {
    "PER_Victim": ["was killed", "died instantly", "injured critically"],
    "PER_Accused": ["was arrested", "alleged mastermind", "accused plotting"],
    "ORG_Victim": ["convoy ambushed", "office targeted", "headquarters damaged"],
    "ORG_Accused": ["claimed responsibility", "militant outfit", "banned group"],
    "LOC_Event": ["blast occurred", "explosion rocked", "bomb exploded"],
    "LOC_Accused": ["training camp", "hideout located", "operated from"],
    "LOC_Victim": ["tourists hailing", "visitors hailing"],
}

DEFAULT_ROLE_WEIGHTS: dict[str, float] = {
    "PER_Victim": 1.0, "PER_Accused": 1.0, "ORG_Victim": 1.0, "ORG_Accused": 1.0,
    "LOC_Event": 1.0, "LOC_Accused": 1.0, "PER_Others": 0.5, "ORG_Others": 0.5,
    "LOC_Others": 0.5,
}

_STOP_FILLER = ("the", "in", "of", "and", "on", "to", "a", "was", "said")
_ONSETS = ("b", "br", "c", "d", "dr", "f", "g", "gr", "h", "j", "k", "l", "m", "n",
           "p", "pr", "r", "s", "st", "t", "tr", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ou")


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_documents: int = 100
    entities_per_document: int = 8
    role_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_ROLE_WEIGHTS))
    cue_lexicon: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_CUES.items()})
    filler_vocabulary: int = 300
    filler_per_side: tuple[int, int] = (2, 6)
    stopword_rate: float = 0.2
    multi_mention_rate: float = 0.23
    max_mentions: int = 6
    majority_share: float = 1.0
    first_mention_majority: float = 1.0
    noise: float = 0.0
    cue_on_first_only: bool = False

    def __post_init__(self):
        self.filler_per_side = tuple(self.filler_per_side)
        self.validate()

    def validate(self):
        for name in ("stopword_rate", "multi_mention_rate", "majority_share",
                     "first_mention_majority", "noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SyntheticSpecError(f"{name}={v} outside [0, 1]")
        if self.n_documents < 1 or self.entities_per_document < 1:
            raise SyntheticSpecError("n_documents and entities_per_document must be >= 1")
        if self.max_mentions < 2 and self.multi_mention_rate > 0:
            raise SyntheticSpecError("max_mentions must be >= 2 when multi_mention_rate > 0")
        lo, hi = self.filler_per_side
        if not 0 <= lo <= hi:
            raise SyntheticSpecError(f"bad filler_per_side {self.filler_per_side}")
        if not self.role_weights or any(w < 0 for w in self.role_weights.values()):
            raise SyntheticSpecError("role_weights must be non-empty and non-negative")
        for role in list(self.role_weights) + list(self.cue_lexicon):
            try:
                RoleLabel(role)
            except ValueError:
                raise SyntheticSpecError(f"unknown role {role!r}") from None

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise SyntheticSpecError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        d = asdict(self)
        d["filler_per_side"] = list(self.filler_per_side)
        return d


@dataclass
class SyntheticCorpus:
    corpus: AnnotatedCorpus
    truth: dict


def _pseudo_words(rng, n, syllables, taken):
    words = []
    while len(words) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syllables))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _closest(candidates, target):
    return min(candidates, key=lambda c: (abs(c[0] - target), c[1]))


def _plan_entities(rng, spec, n_entities):
    """Mention count, minority count and first-mention violation per entity."""
    n_multi = int(round(spec.multi_mention_rate * n_entities))
    multi = set(rng.permutation(n_entities)[:n_multi].tolist())
    counts = [int(rng.integers(2, spec.max_mentions + 1)) if i in multi else 1 for i in range(n_entities)]

    minority = [0] * n_entities
    violate = [False] * n_entities
    share_sum, n_seen, n_viol = 0.0, 0, 0
    target_viol = 1.0 - spec.first_mention_majority
    for i in range(n_entities):
        m = counts[i]
        if m < 2:
            continue
        n_seen += 1
        # strict majority keeps the planted majority role unambiguous
        options = [((share_sum + (m - k) / m) / n_seen, k) for k in range(0, (m - 1) // 2 + 1)]
        _, k = _closest(options, spec.majority_share)
        minority[i] = k
        share_sum += (m - k) / m
        if k >= 1 and abs((n_viol + 1) / n_seen - target_viol) < abs(n_viol / n_seen - target_viol):
            violate[i] = True
            n_viol += 1
    return counts, minority, violate


def generate_synthetic(seed: int, spec: SyntheticSpec) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(seed)
    roles = [RoleLabel(r) for r in spec.role_weights]
    weights = np.array([spec.role_weights[r.value] for r in roles], dtype=float)
    weights /= weights.sum()

    taken = {w for phrase in (p for ps in spec.cue_lexicon.values() for p in ps) for w in phrase.lower().split()}
    taken |= set(_STOP_FILLER)
    filler = _pseudo_words(rng, spec.filler_vocabulary, 3, taken)
    zipf = 1.0 / np.arange(1, len(filler) + 1)
    zipf /= zipf.sum()
    names = {
        "PER": [w.capitalize() for w in _pseudo_words(rng, 120, 2, taken)],
        "ORG": [w.upper() for w in _pseudo_words(rng, 80, 2, taken)],
        "LOC": [w.capitalize() for w in _pseudo_words(rng, 120, 3, taken)],
    }
    cues = {RoleLabel(r): [p.split() for p in ps] for r, ps in spec.cue_lexicon.items() if ps}

    n_entities = spec.n_documents * spec.entities_per_document
    counts, minority, violate = _plan_entities(rng, spec, n_entities)

    def alternatives(role):
        same = [r for r in roles if r != role and r.coarse_type == role.coarse_type]
        return same or [r for r in RoleLabel if r != role]

    def filler_words(k):
        out = []
        for _ in range(k):
            if rng.random() < spec.stopword_rate:
                out.append(_STOP_FILLER[rng.integers(len(_STOP_FILLER))])
            else:
                out.append(filler[rng.choice(len(filler), p=zipf)])
        return out

    docs, mention_truth, entity_truth = [], [], []
    ent = 0
    lo, hi = spec.filler_per_side
    for d in range(spec.n_documents):
        doc_id = f"doc{d:05d}"
        entities = []
        used_names = set()
        for _ in range(spec.entities_per_document):
            maj = roles[rng.choice(len(roles), p=weights)]
            pool = names[maj.coarse_type]
            while True:
                if maj.coarse_type == "PER":
                    name = [pool[rng.integers(len(pool))], pool[rng.integers(len(pool))]]
                else:
                    name = [pool[rng.integers(len(pool))]]
                if " ".join(name) not in used_names:
                    used_names.add(" ".join(name))
                    break
            m, k = counts[ent], minority[ent]
            mroles = [maj] * m
            alts = alternatives(maj)
            if k:
                slots = [0] if violate[ent] else []
                rest = [i for i in range(1, m)]
                need = k - len(slots)
                slots += sorted(rng.choice(rest, size=need, replace=False).tolist()) if need else []
                for s in slots:
                    mroles[s] = alts[rng.integers(len(alts))]
            key = "_".join(name).lower()
            entities.append((key, name, mroles))
            entity_truth.append({"document": doc_id, "entity": key, "majority_role": maj.value,
                                 "mentions": m, "roles": [r.value for r in mroles],
                                 "first_is_majority": mroles[0] == maj})
            ent += 1

        order = [e for e, (_, _, mr) in enumerate(entities) for _ in mr]
        order = [order[i] for i in rng.permutation(len(order))]
        seen = [0] * len(entities)
        sentences, mentions = [], []
        for e in order:
            key, name, mroles = entities[e]
            ordinal = seen[e]
            seen[e] += 1
            role = mroles[ordinal]
            left = filler_words(int(rng.integers(lo, hi + 1)))
            right = filler_words(int(rng.integers(lo, hi + 1)))
            has_cue = (role in cues and rng.random() >= spec.noise
                       and not (spec.cue_on_first_only and ordinal > 0))
            if has_cue:
                phrase = cues[role][rng.integers(len(cues[role]))]
                if rng.random() < 0.5:
                    left = left + phrase
                else:
                    right = phrase + right
            si = len(sentences)
            start = len(left)
            sentences.append(left + name + right)
            mentions.append((key, si, start, start + len(name) - 1, role))
            mention_truth.append({"document": doc_id, "entity": key, "ordinal": ordinal,
                                  "role": role.value, "has_cue": bool(has_cue)})
        docs.append(build_document(doc_id, sentences, mentions))

    multi = [t for t in entity_truth if t["mentions"] >= 2]
    share = [sum(r == t["majority_role"] for r in t["roles"]) / t["mentions"] for t in entity_truth]
    share_multi = [s for s, t in zip(share, entity_truth) if t["mentions"] >= 2]
    truth = {
        "seed": seed,
        "spec": spec.to_json(),
        "realized": {
            "n_entities": n_entities,
            "multi_mention_rate": len(multi) / n_entities,
            "majority_share": float(np.mean(share)),
            "majority_share_multi": float(np.mean(share_multi)) if multi else None,
            "first_mention_majority": float(np.mean([t["first_is_majority"] for t in entity_truth])),
            "first_mention_majority_multi": (float(np.mean([t["first_is_majority"] for t in multi]))
                                             if multi else None),
            "cue_rate": float(np.mean([m["has_cue"] for m in mention_truth])) if mention_truth else 0.0,
        },
        "entities": entity_truth,
        "mentions": mention_truth,
    }
    return SyntheticCorpus(AnnotatedCorpus(tuple(docs)), truth)


def load_spec(path) -> SyntheticSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticSpec.from_json(json.load(fh))
