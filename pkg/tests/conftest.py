import json

import pytest

from entrole.corpus import RoleLabel, build_document, AnnotatedCorpus

# Two hand-written documents used across test modules.
DOC_A = {
    "id": "a1",
    "sentences": [
        ["Police", "said", "Ram", "Kumar", "was", "killed", "in", "the", "blast", "at", "Delhi", "."],
        ["The", "LET", "outfit", "claimed", "responsibility", "."],
        ["Kumar", "was", "a", "trader", "."],
    ],
    "mentions": [
        {"entity": "ram_kumar", "sent": 0, "start": 2, "end": 3, "role": "PER_Victim"},
        {"entity": "delhi", "sent": 0, "start": 10, "end": 10, "role": "LOC_Event"},
        {"entity": "let", "sent": 1, "start": 1, "end": 1, "role": "ORG_Accused"},
        {"entity": "ram_kumar", "sent": 2, "start": 0, "end": 0, "role": "PER_Others"},
    ],
}
DOC_B = {
    "id": "b2",
    "sentences": [["Troops", "raided", "a", "hideout", "in", "Kupwara", "."]],
    "mentions": [{"entity": "kupwara", "sent": 0, "start": 5, "end": 5, "role": "LOC_Accused"}],
}


def make_corpus(*objs) -> AnnotatedCorpus:
    docs = []
    for o in objs:
        raw = [(m["entity"], m["sent"], m["start"], m["end"], RoleLabel(m["role"])) for m in o["mentions"]]
        docs.append(build_document(o["id"], o["sentences"], raw))
    return AnnotatedCorpus(tuple(docs))


@pytest.fixture
def tiny_corpus():
    return make_corpus(DOC_A, DOC_B)


@pytest.fixture
def tiny_jsonl(tmp_path):
    path = tmp_path / "tiny.jsonl"
    path.write_text("\n".join(json.dumps(o) for o in (DOC_A, DOC_B)) + "\n", encoding="utf-8")
    return path
