"""Group-average similarity ranking of entities against role queries, and mAP@K."""
from __future__ import annotations

import csv
import json
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import IN_STUDY_ROLES, Document, EntityMention, RoleLabel
from .representations import EntityRepresentation, RoleQuery

UNRANKABLE = -math.inf


class VectorSet:
    """Non-empty set of unit-norm vectors, stored as an ``(N, D)`` array."""

    def __init__(self, vectors, atol: float = 1e-9):
        v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if v.shape[0] < 1:
            raise ValueError("a vector set needs at least one vector")
        norms = np.linalg.norm(v, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=atol):
            raise ValueError(f"vectors must have unit norm (max deviation {np.abs(norms - 1).max():.3g})")
        self.vectors = v

    def __len__(self) -> int:
        return self.vectors.shape[0]


def sim_ga(e, t) -> float:
    """Mean cosine over all distinct pairs of the pooled set ``e + t``.

    Closed form: ``(|sum v|^2 - N) / (N (N - 1))`` with ``N = N_e + N_t``,
    which drops the ``N`` self-similarities from the squared norm.
    """
    e = e.vectors if isinstance(e, VectorSet) else np.atleast_2d(e)
    t = t.vectors if isinstance(t, VectorSet) else np.atleast_2d(t)
    n = len(e) + len(t)
    total = e.sum(axis=0) + t.sum(axis=0)
    return float((total @ total - n) / (n * (n - 1)))


@dataclass
class RankedItem:
    entity_key: str
    mention: EntityMention
    score: float
    relevant: bool
    rankable: bool = True


@dataclass
class RankedList:
    document_id: str
    role: RoleLabel
    items: list[RankedItem]
    n_relevant: int

    @property
    def relevance(self) -> list[bool]:
        return [it.relevant for it in self.items]


def rank_entities(representations: Mapping[EntityMention, EntityRepresentation | None],
                  query: RoleQuery, document: Document) -> RankedList:
    """Score each mention by SIM-GA, keep the best mention per entity, sort descending.

    An entity is relevant when any of its mentions carries the query role.
    Entities with no usable representation go last in document order.
    """
    first_pos = {}
    best: dict[str, tuple[float, EntityMention]] = {}
    roles = defaultdict(set)
    for pos, m in enumerate(document.mentions):
        first_pos.setdefault(m.entity_key, pos)
        roles[m.entity_key].add(m.role)
        rep = representations.get(m)
        score = UNRANKABLE if rep is None or rep.is_empty else sim_ga(rep.vectors, query.vectors)
        if m.entity_key not in best or score > best[m.entity_key][0]:
            best[m.entity_key] = (score, m)
    items = [RankedItem(k, m, s, query.role in roles[k], s != UNRANKABLE) for k, (s, m) in best.items()]
    items.sort(key=lambda it: (-it.score, first_pos[it.entity_key]))
    return RankedList(document.id, query.role, items, sum(query.role in r for r in roles.values()))


def average_precision_at_k(relevance: Sequence[bool] | RankedList, k: int, n_relevant: int | None = None) -> float:
    """``sum_{i<=k, rel_i} precision@i / min(k, R)``.

    ``n_relevant`` (R) defaults to the relevant count in the list.
    """
    if isinstance(relevance, RankedList):
        n_relevant = relevance.n_relevant if n_relevant is None else n_relevant
        relevance = relevance.relevance
    if n_relevant is None:
        n_relevant = sum(bool(r) for r in relevance)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_relevant == 0:
        raise ValueError("query has no relevant entities")
    hits, total = 0, 0.0
    for i, rel in enumerate(relevance[:k], 1):
        if rel:
            hits += 1
            total += hits / i
    return total / min(k, n_relevant)


def map_at_k(lists: Iterable[RankedList], k: int) -> float:
    included = [rl for rl in lists if rl.n_relevant > 0]
    if not included:
        raise ValueError("no query has a relevant entity")
    return sum(average_precision_at_k(rl, k) for rl in included) / len(included)


def map_curve(lists: Sequence[RankedList], kmax: int) -> list[float]:
    return [map_at_k(lists, k) for k in range(1, kmax + 1)]


@dataclass
class RankingReport:
    method: str
    kmax: int
    curve: list[float]
    per_role: dict[str, list[float]]
    per_query: list[dict]
    n_queries: int
    n_excluded: int
    n_unrankable: int = 0
    extra: dict = field(default_factory=dict)

    def map_at(self, k: int) -> float:
        return self.curve[k - 1]

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "kmax": self.kmax,
            "map": {str(k + 1): v for k, v in enumerate(self.curve)},
            "per_role": {r: {str(k + 1): v for k, v in enumerate(c)} for r, c in self.per_role.items()},
            "n_queries": self.n_queries,
            "n_excluded_queries": self.n_excluded,
            "n_unrankable_mentions": self.n_unrankable,
            "queries": self.per_query,
            **self.extra,
        }

    def write(self, out_dir, stem: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, f"{stem}_curve.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "mAP"])
            for k, v in enumerate(self.curve, 1):
                w.writerow([k, f"{v:.6f}"])
        with open(os.path.join(out_dir, f"{stem}_roles.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            kk = min(5, self.kmax)
            w.writerow(["Role"] + [f"mAP@{k}" for k in range(1, kk + 1)])
            for role, c in self.per_role.items():
                w.writerow([role] + [f"{v:.6f}" for v in c[:kk]])


def evaluate_rankings(lists: Sequence[RankedList], kmax: int = 10, method: str = "",
                      n_unrankable: int = 0) -> RankingReport:
    """Aggregate per-query AP@K into mAP@K, overall and per role.

    Queries with no relevant entity are excluded from the means and counted.
    """
    included = [rl for rl in lists if rl.n_relevant > 0]
    per_query = []
    for rl in included:
        per_query.append({
            "document": rl.document_id,
            "role": rl.role.value,
            "n_relevant": rl.n_relevant,
            "ranking": [it.entity_key for it in rl.items],
            "ap": [average_precision_at_k(rl, k) for k in range(1, kmax + 1)],
        })
    if included:
        curve = [float(np.mean([q["ap"][k] for q in per_query])) for k in range(kmax)]
    else:
        curve = [float("nan")] * kmax
    per_role = {}
    for role in IN_STUDY_ROLES:
        qs = [q for q in per_query if q["role"] == role.value]
        if qs:
            per_role[role.value] = [float(np.mean([q["ap"][k] for q in qs])) for k in range(kmax)]
    return RankingReport(method, kmax, curve, per_role, per_query, len(included),
                         len(lists) - len(included), n_unrankable)


def write_comparison(reports: Sequence[RankingReport], path, kmax: int = 5) -> None:
    """One row per method with mAP@1..kmax, in the layout of a results table."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Method"] + [f"mAP@{k}" for k in range(1, kmax + 1)])
        for r in reports:
            w.writerow([r.method] + [f"{r.map_at(k):.6f}" for k in range(1, kmax + 1)])
