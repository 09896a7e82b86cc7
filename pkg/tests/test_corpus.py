import json

import pytest
from hypothesis import given, settings, strategies as st

from entrole.corpus import (
    IN_STUDY_ROLES, ROLE_TOKENS, CorpusFormatError, PreprocessConfig, RoleLabel, SpanError, UnknownRoleError,
    bio_to_spans, build_document, convert_corpus, load_corpus, majority_role, mention_statistics, preprocess,
    role_frequency_table, save_corpus, sentence_stream, spans_to_bio, substitute_roles, suffix_stem,
)


class TestRoles:
    def test_ten_roles_six_in_study(self):
        assert len(RoleLabel) == 10
        assert [r.value for r in IN_STUDY_ROLES] == [
            "PER_Victim", "PER_Accused", "ORG_Victim", "ORG_Accused", "LOC_Event", "LOC_Accused"]
        assert RoleLabel.LOC_Victim not in IN_STUDY_ROLES

    def test_tokens(self):
        assert RoleLabel.PER_Victim.token == "<PER_Victim>"
        assert len(ROLE_TOKENS) == 10
        assert RoleLabel.ORG_Others.coarse_type == "ORG"


class TestLoading:
    def test_jsonl(self, tiny_jsonl):
        c = load_corpus(tiny_jsonl)
        assert len(c) == 2
        doc = c.document("a1")
        assert [m.entity_key for m in doc.mentions] == ["ram_kumar", "delhi", "let", "ram_kumar"]
        assert [m.mention_ordinal for m in doc.mentions] == [0, 0, 0, 1]
        assert [t.surface for t in doc.mention_tokens(doc.mentions[0])] == ["Ram", "Kumar"]

    def test_role_frequencies_match_recount(self, tiny_corpus):
        freqs = tiny_corpus.role_frequencies
        assert freqs[RoleLabel.PER_Victim] == 1
        assert freqs[RoleLabel.PER_Others] == 1
        assert freqs[RoleLabel.LOC_Victim] == 0
        assert sum(freqs.values()) == 5
        table = role_frequency_table(tiny_corpus)
        assert table.splitlines()[0].startswith("Entity Role")
        assert len(table.splitlines()) == 11

    def test_unknown_role(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text(json.dumps({"id": "d", "sentences": [["a"]],
                                 "mentions": [{"entity": "a", "sent": 0, "start": 0, "end": 0,
                                               "role": "PER_Hero"}]}) + "\n")
        with pytest.raises(UnknownRoleError):
            load_corpus(p)

    @pytest.mark.parametrize("mention,err", [
        ({"entity": "a", "sent": 0, "start": 0, "end": 5, "role": "PER_Victim"}, "out of range"),
        ({"entity": "a", "sent": 2, "start": 0, "end": 0, "role": "PER_Victim"}, "sentence index"),
        ({"entity": "a", "sent": 0, "start": 1, "end": 0, "role": "PER_Victim"}, "end 0 < start 1"),
    ])
    def test_bad_spans(self, tmp_path, mention, err):
        p = tmp_path / "x.jsonl"
        p.write_text(json.dumps({"id": "d", "sentences": [["a", "b"]], "mentions": [mention]}) + "\n")
        with pytest.raises(SpanError, match=err):
            load_corpus(p)

    def test_overlap_rejected(self):
        with pytest.raises(SpanError, match="overlapping"):
            build_document("d", [["a", "b", "c"]], [("x", 0, 0, 1, RoleLabel.PER_Victim),
                                                      ("y", 0, 1, 2, RoleLabel.LOC_Event)])

    def test_line_diagnostics(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text(json.dumps({"id": "d", "sentences": [["a"]]}) + "\n{broken\n")
        with pytest.raises(CorpusFormatError) as exc:
            load_corpus(p)
        assert exc.value.line == 2

    def test_duplicate_ids(self, tmp_path):
        line = json.dumps({"id": "d", "sentences": [["a"]]})
        p = tmp_path / "x.jsonl"
        p.write_text(line + "\n" + line + "\n")
        with pytest.raises(CorpusFormatError, match="duplicate"):
            load_corpus(p)


class TestColumnFormat:
    def test_round_trip(self, tiny_corpus, tmp_path):
        col = tmp_path / "c.column"
        save_corpus(tiny_corpus, col, "column")
        back = load_corpus(col, "column")
        assert [d.id for d in back] == ["a1", "b2"]
        for d0, d1 in zip(tiny_corpus, back):
            assert [[t.surface for t in s] for s in d0.sentences] == [[t.surface for t in s] for s in d1.sentences]
            assert [(m.sentence, m.start, m.end, m.role) for m in d0.mentions] == \
                   [(m.sentence, m.start, m.end, m.role) for m in d1.mentions]

    def test_jsonl_round_trip_is_byte_stable(self, tiny_jsonl, tmp_path):
        out1, out2 = tmp_path / "1.jsonl", tmp_path / "2.jsonl"
        convert_corpus(tiny_jsonl, out1, "jsonl", "jsonl")
        convert_corpus(out1, out2, "jsonl", "jsonl")
        assert out1.read_bytes() == out2.read_bytes()

    def test_dangling_inside_is_an_error(self, tmp_path):
        p = tmp_path / "x.column"
        p.write_text("-DOCSTART- d\n\nRam\tO\nKumar\tI-PER_Victim\n\n")
        with pytest.raises(SpanError):
            load_corpus(p, "column")

    def test_bad_row(self, tmp_path):
        p = tmp_path / "x.column"
        p.write_text("Ram O\n")
        with pytest.raises(CorpusFormatError) as exc:
            load_corpus(p, "column")
        assert exc.value.line == 1


class TestBio:
    def test_decode(self):
        spans, fixed = bio_to_spans(["B-PER_Victim", "I-PER_Victim", "O", "B-LOC_Event"])
        assert spans == [(0, 1, "PER_Victim"), (3, 3, "LOC_Event")]
        assert fixed == 0

    def test_repair(self):
        spans, fixed = bio_to_spans(["O", "I-LOC_Event", "I-LOC_Event", "I-PER_Victim"], strict=False)
        assert spans == [(1, 2, "LOC_Event"), (3, 3, "PER_Victim")]
        assert fixed == 2

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_round_trip(self, data):
        n = data.draw(st.integers(1, 15))
        spans, i = [], 0
        while i < n:
            if data.draw(st.booleans()):
                end = data.draw(st.integers(i, min(n - 1, i + 3)))
                spans.append((i, end, data.draw(st.sampled_from([r.value for r in RoleLabel]))))
                i = end + 1
            else:
                i += 1
        tags = spans_to_bio(n, spans)
        assert bio_to_spans(tags)[0] == spans


class TestPreprocessing:
    @pytest.mark.parametrize("word,stem", [
        ("killing", "kill"), ("bombed", "bomb"), ("injuries", "injury"), ("carried", "carry"),
        ("boxes", "box"), ("rates", "rate"), ("quickly", "quick"), ("bus", "bus"), ("this", "this"),
        ("attacks", "attack"), ("was", "was"), ("reportedly", "report"),
    ])
    def test_suffix_stem(self, word, stem):
        assert suffix_stem(word) == stem

    def test_mentions_never_removed(self):
        cfg = PreprocessConfig(stopwords={"the", "a"})
        c = preprocess(make_one([["The", "A", "x"]], [("the_a", 0, 0, 1, RoleLabel.ORG_Victim)]), cfg)
        assert [t.normalized for t in c.document("d").sentences[0]] == ["the", "a", "x"]

    def test_stopwords_removed_outside(self, tiny_corpus):
        c = preprocess(tiny_corpus, PreprocessConfig.default())
        stream = sentence_stream(c)
        assert "the" not in stream[1] and "outfit" in stream[1]
        assert stream[0][:4] == ["police", "said", "ram", "kumar"]

    def test_substitute_roles(self, tiny_corpus):
        c = preprocess(tiny_corpus, PreprocessConfig.default())
        rows = substitute_roles(c)
        assert rows[0][:3] == ["police", "said", "<PER_Victim>"]
        assert "<LOC_Event>" in rows[0]
        assert rows[2][0] == "<PER_Others>"
        assert "kumar" not in rows[0]


def make_one(sentences, mentions):
    from entrole.corpus import AnnotatedCorpus
    return AnnotatedCorpus((build_document("d", sentences, mentions),))


class TestStatistics:
    def test_majority_tie_goes_to_first(self):
        assert majority_role([RoleLabel.PER_Others, RoleLabel.PER_Victim]) == RoleLabel.PER_Others
        assert majority_role([RoleLabel.PER_Others, RoleLabel.PER_Victim, RoleLabel.PER_Victim]) == \
            RoleLabel.PER_Victim

    def test_tiny(self, tiny_corpus):
        # ram_kumar has two mentions with different roles; the tie goes to the first
        rep = mention_statistics(tiny_corpus)
        assert rep.n_entities == 4
        assert rep.n_multi_mention == 1
        assert rep.multi_mention_fraction == 0.25
        assert rep.mention_histogram == {1: 3, 2: 1}
        assert rep.majority_share_multi == 0.5
        assert rep.majority_share == pytest.approx((1 + 1 + 1 + 0.5) / 4)
        assert rep.first_mention_majority == 1.0

    def test_singletons_only(self):
        c = make_one([["a", "b"]], [("a", 0, 0, 0, RoleLabel.PER_Victim), ("b", 0, 1, 1, RoleLabel.LOC_Event)])
        rep = mention_statistics(c)
        assert rep.multi_mention_fraction == 0.0
        assert rep.majority_share_multi is None

    def test_csv_outputs(self, tiny_corpus, tmp_path):
        import csv
        mention_statistics(tiny_corpus).write(tmp_path)
        with open(tmp_path / "mention_histogram.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows == [["mentions", "entities"], ["1", "3"], ["2", "1"]]
        with open(tmp_path / "majority_share.csv") as fh:
            assert next(csv.reader(fh)) == ["mentions", "majority_share_pct"]
        with open(tmp_path / "positional.csv") as fh:
            assert next(csv.reader(fh)) == ["majority_role", "first_mention_majority_pct"]
