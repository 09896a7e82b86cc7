"""Role-wise precision of BIO tag predictions at mention and token level."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..corpus import IN_STUDY_ROLES, bio_to_spans


@dataclass
class RoleScore:
    predicted: int
    correct: int
    gold: int
    token_predicted: int
    token_correct: int

    @property
    def precision(self) -> float | None:
        return self.correct / self.predicted if self.predicted else None

    @property
    def token_precision(self) -> float | None:
        return self.token_correct / self.token_predicted if self.token_predicted else None


@dataclass
class TaggerReport:
    system: str
    roles: dict[str, RoleScore]
    repairs: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def macro_precision(self) -> float | None:
        vals = [s.precision for s in self.roles.values() if s.precision is not None]
        return sum(vals) / len(vals) if vals else None

    @property
    def micro_precision(self) -> float | None:
        pred = sum(s.predicted for s in self.roles.values())
        return sum(s.correct for s in self.roles.values()) / pred if pred else None

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "roles": {r: {"precision": s.precision, "correct": s.correct, "predicted": s.predicted,
                          "gold": s.gold, "token_precision": s.token_precision}
                      for r, s in self.roles.items()},
            "average_precision": self.macro_precision,
            "micro_precision": self.micro_precision,
            "bio_repairs": self.repairs,
            **self.extra,
        }


def role_precision_report(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]],
                          system: str = "") -> TaggerReport:
    """Per-role precision for the in-study roles.

    A predicted span is correct when a gold span has the same boundaries and
    role.  Dangling ``I-X`` tags in predictions are read as ``B-X`` and
    counted in ``repairs``.  Roles with no predicted span have precision
    ``None`` and are left out of the macro average.
    """
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sequences but {len(predicted)} predicted")
    wanted = {r.value for r in IN_STUDY_ROLES}
    counts = {r: [0, 0, 0, 0, 0] for r in wanted}
    repairs = 0
    for si, (g, p) in enumerate(zip(gold, predicted)):
        if len(g) != len(p):
            raise ValueError(f"sequence {si}: {len(g)} gold tags but {len(p)} predicted")
        g_spans, _ = bio_to_spans(g, strict=False)
        p_spans, fixed = bio_to_spans(p, strict=False)
        repairs += fixed
        g_set = set(g_spans)
        for start, end, label in p_spans:
            if label in wanted:
                counts[label][0] += 1
                counts[label][1] += (start, end, label) in g_set
        for _, _, label in g_spans:
            if label in wanted:
                counts[label][2] += 1
        for gt, pt in zip(g, p):
            label = pt.partition("-")[2]
            if label in wanted:
                counts[label][3] += 1
                counts[label][4] += gt.partition("-")[2] == label
    roles = {r.value: RoleScore(*counts[r.value]) for r in IN_STUDY_ROLES}
    return TaggerReport(system, roles, repairs)


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.2f}"


def write_tagger_table(reports: Sequence[TaggerReport], out_dir, stem: str = "tagging") -> None:
    """Role rows by system columns, closed by an Average Precision row."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{stem}.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Entity Role"] + [r.system for r in reports])
        for role in IN_STUDY_ROLES:
            w.writerow([role.value] + [_pct(r.roles[role.value].precision) for r in reports])
        w.writerow(["Average Precision"] + [_pct(r.macro_precision) for r in reports])
        w.writerow(["Micro Precision"] + [_pct(r.micro_precision) for r in reports])
    with open(os.path.join(out_dir, f"{stem}.json"), "w", encoding="utf-8") as fh:
        json.dump({r.system: r.to_json() for r in reports}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def tag_sequences(corpus) -> list[tuple[list[str], list[str]]]:
    """(surfaces, BIO tags) per sentence of an annotated corpus."""
    from ..corpus import spans_to_bio
    out = []
    for doc in corpus:
        by_sent: Mapping[int, list] = {}
        for m in doc.mentions:
            by_sent.setdefault(m.sentence, []).append((m.start, m.end, m.role.value))
        for si, sent in enumerate(doc.sentences):
            out.append(([t.surface for t in sent], spans_to_bio(len(sent), by_sent.get(si, []))))
    return out
