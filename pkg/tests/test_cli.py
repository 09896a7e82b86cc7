import csv
import json
import os

import numpy as np
import pytest

from entrole import pipeline
from entrole.cli import main
from entrole.corpus import load_corpus, mention_statistics
from entrole.pipeline import ConfigError, PipelineConfig, read_predictions
from entrole.taggers import role_precision_report, tag_sequences


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--seed", "4", "--documents", "30", "--noise", "0.1", "--out", str(out)]) == 0
    return out


def _config(tmp_path, corpus, **ranking):
    cfg = {
        "corpus": {"path": str(corpus), "test_fraction": 0.3},
        "embedding": {"dimension": 16, "epochs": 2},
        "ranking": {"kmax": 5, **ranking},
        "tagging": {"taggers": ["hmm", "crf"], "crf": {"epochs": 2}},
        "seed": 3,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def _read_tree(root):
    files = {}
    for base, _, names in os.walk(root):
        for n in names:
            p = os.path.join(base, n)
            with open(p, "rb") as fh:
                files[os.path.relpath(p, root)] = fh.read()
    return files


class TestConfig:
    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            PipelineConfig.from_dict({"ranking": {"radius": 3}})

    def test_missing_file(self, tmp_path):
        cfg = PipelineConfig.from_dict({"corpus": {"path": str(tmp_path / "none.jsonl")}})
        with pytest.raises(ConfigError, match="does not exist"):
            cfg.validate()

    def test_bad_choice(self, synth_dir):
        cfg = PipelineConfig.from_dict({"corpus": {"path": str(synth_dir / "corpus.jsonl")},
                                        "ranking": {"queries": ["SW3"]}})
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_nested_sections(self):
        cfg = PipelineConfig.from_dict({"ranking": {"docvec": {"steps": 7}}, "tagging": {"crf": {"l2": 0.5}}})
        assert cfg.ranking.docvec.steps == 7 and cfg.tagging.crf.l2 == 0.5


class TestExitCodes:
    def test_ingest_ok(self, synth_dir, capsys, tmp_path):
        out = tmp_path / "c.column"
        assert main(["ingest", str(synth_dir / "corpus.jsonl"), "--output", str(out),
                     "--output-format", "column"]) == 0
        table = capsys.readouterr().out
        corpus = load_corpus(synth_dir / "corpus.jsonl")
        recount = {}
        for m in corpus.mentions():
            recount[m.role.value] = recount.get(m.role.value, 0) + 1
        for line in table.splitlines()[1:]:
            role, n = line.split()
            assert int(n) == recount.get(role, 0)
        assert len(load_corpus(out, "column")) == len(corpus)

    def test_malformed_input(self, tmp_path, capsys):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": "d", "sentences": [["a"]]}\n{"id": 3\n')
        assert main(["ingest", str(p)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_bad_config(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text('{"seeed": 1}')
        assert main(["rank", "--config", str(p)]) == 2
        p.write_text('{not json')
        assert main(["rank", "--config", str(p)]) == 2

    def test_bad_arguments(self):
        assert main(["rank", "--radius", "two"]) == 2
        assert main(["nope"]) == 2

    def test_stage_failure(self, synth_dir, tmp_path, monkeypatch, capsys):
        def boom(*a, **k):
            raise FloatingPointError("diverged")
        monkeypatch.setattr(pipeline, "train_skipgram", boom)
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl")
        assert main(["embed", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "embed:none" in err and "diverged" in err


class TestStats:
    def test_matches_direct_call(self, synth_dir, tmp_path):
        assert main(["stats", str(synth_dir / "corpus.jsonl"), "--out", str(tmp_path)]) == 0
        direct = mention_statistics(load_corpus(synth_dir / "corpus.jsonl"))
        with open(tmp_path / "stats.json") as fh:
            assert json.load(fh) == json.loads(json.dumps(direct.to_json()))
        with open(tmp_path / "mention_histogram.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {int(r["mentions"]): int(r["entities"]) for r in rows} == direct.mention_histogram


class TestRanking:
    def test_outputs_and_determinism(self, synth_dir, tmp_path):
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl",
                      representations=["cluster", "centroid", "docvec"], contexts=["sentence", "document"])
        rel = ["--phrase-mode", "none"]
        assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "a")] + rel) == 0
        assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "b")] + rel) == 0
        a, b = _read_tree(tmp_path / "a"), _read_tree(tmp_path / "b")
        a.pop("config.resolved.json"), b.pop("config.resolved.json")
        assert a == b
        with open(tmp_path / "a" / "comparison.csv") as fh:
            rows = list(csv.reader(fh))
        names = [r[0] for r in rows[1:]]
        assert rows[0] == ["Method", "mAP@1", "mAP@2", "mAP@3", "mAP@4", "mAP@5"]
        assert names == ["E-W-N5/TV", "E-W-N5/TV/document", "E-V-C-N5/TV", "E-V-C-N5/TV/document",
                         "E-V-D2V-N5/TV", "E-V-D2V-N5/TV/document"]
        assert (tmp_path / "a" / "context_comparison_none.csv").exists()
        snap = json.loads((tmp_path / "a" / "config.resolved.json").read_text())
        assert snap["seed"] == 3 and snap["out"] == str(tmp_path / "a")

    def test_phrase_modes(self, synth_dir, tmp_path):
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl")
        data = json.loads(cfg.read_text())
        data["phrases"] = {"modes": ["none", "collocation", "relation"],
                           "relations": str(synth_dir / "relations.tsv")}
        cfg.write_text(json.dumps(data))
        assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 0
        with open(tmp_path / "p" / "phrase_comparison.csv") as fh:
            names = [r[0] for r in list(csv.reader(fh))[1:]]
        assert names == ["E-V-C-N5/TV", "E-V-C-N5/TV/collocation", "E-V-C-N5/TV/relation"]
        assert (tmp_path / "p" / "phrases-relation.tsv").stat().st_size > 0

    def test_stages_rerun_from_files(self, synth_dir, tmp_path):
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl")
        out = str(tmp_path / "s")
        assert main(["embed", "--config", str(cfg), "--out", out]) == 0
        assert main(["represent", "--config", str(cfg), "--out", out]) == 0
        assert len(os.listdir(os.path.join(out, "cache"))) == 1
        assert main(["rank", "--config", str(cfg), "--out", out, "--reuse-models"]) == 0
        assert main(["rank", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
        a = (tmp_path / "s" / "comparison.csv").read_bytes()
        assert a == (tmp_path / "t" / "comparison.csv").read_bytes()

    def test_noise_free_corpus_is_ranked_perfectly(self, tmp_path):
        out = tmp_path / "clean"
        assert main(["synth", "--seed", "7", "--documents", "200", "--noise", "0", "--out", str(out)]) == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"corpus": {"path": str(out / "corpus.jsonl")},
                                   "embedding": {"dimension": 64, "epochs": 5}}))
        assert main(["rank", "--config", str(cfg), "--radius", "2", "--out", str(tmp_path / "r")]) == 0
        summary = json.loads((tmp_path / "r" / "summary.json").read_text())
        assert summary["methods"]["E-V-C-N2/TV"]["map"][0] == 1.0


class TestTagging:
    def test_reports_match_predictions(self, synth_dir, tmp_path):
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl")
        out = tmp_path / "tag"
        assert main(["tag", "--config", str(cfg), "--out", str(out)]) == 0
        _, test = pipeline.split_corpus(PipelineConfig.load(cfg))
        gold = [t for _, t in tag_sequences(test)]
        report = json.loads((out / "tagging.json").read_text())
        for name, system in (("hmm", "HMM"), ("crf", "CRF")):
            pred = read_predictions(out / f"predictions-{name}.column")
            again = role_precision_report(gold, pred, system).to_json()
            assert again == report[system]
        first = (out / "tagging.csv").read_bytes()
        assert main(["tag", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "tagging.csv").read_bytes() == first

    def test_memorization(self, tmp_path):
        p = tmp_path / "tiny.column"
        p.write_text("-DOCSTART- d\n\nRam\tB-PER_Victim\nwas\tO\nkilled\tO\n\n"
                     "LET\tB-ORG_Accused\nclaimed\tO\n\n")
        cfg = PipelineConfig.from_dict({
            "corpus": {"path": str(p), "format": "column", "test_path": str(p)},
            "tagging": {"taggers": ["hmm"], "alpha_t": 0.0, "alpha_e": 0.0}, "out": str(tmp_path / "o")})
        reports = pipeline.run_tagging(cfg)
        assert reports["HMM"].macro_precision == 1.0

    def test_external_predictions(self, synth_dir, tmp_path):
        cfg = _config(tmp_path, synth_dir / "corpus.jsonl")
        out = tmp_path / "tag"
        assert main(["tag", "--config", str(cfg), "--out", str(out), "--taggers", "hmm"]) == 0
        data = json.loads(cfg.read_text())
        data["tagging"]["taggers"] = []
        data["tagging"]["external"] = {"BLSTM": str(out / "predictions-hmm.column")}
        cfg.write_text(json.dumps(data))
        assert main(["tag", "--config", str(cfg), "--out", str(tmp_path / "ext")]) == 0
        report = json.loads((tmp_path / "ext" / "tagging.json").read_text())
        hmm = json.loads((out / "tagging.json").read_text())["HMM"]
        assert report["BLSTM"]["average_precision"] == hmm["average_precision"]
