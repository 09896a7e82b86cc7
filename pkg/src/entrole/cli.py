"""Command line entry point: ``entrole <subcommand> [options]``.

Exit codes: 0 on success, 1 when a pipeline stage fails, 2 for bad input or
configuration.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import corpus as C
from .phrases import PhraseConfig, collocation_scores, corpus_token_rows, load_relation_phrases
from .pipeline import (ConfigError, PipelineConfig, StageError, run_embed, run_ranking, run_represent, run_stats,
                       run_tagging, stage)
from .synthetic import SyntheticSpec, SyntheticSpecError, generate_synthetic, load_spec

logger = logging.getLogger("entrole")

EXIT_OK, EXIT_STAGE, EXIT_INPUT = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-threaded, seeded execution (the default)")
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=["jsonl", "column"], help="corpus file format")
    p.add_argument("--corpus", help="corpus path (overrides corpus.path)")


def _overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--radius", "-d", type=int, help="context window radius")
    p.add_argument("--n", type=int, help="query expansion size; 0 selects TV")
    p.add_argument("--phrase-mode", choices=["none", "collocation", "relation"])
    p.add_argument("--context", choices=["sentence", "document"])
    p.add_argument("--representation", choices=["cluster", "centroid", "docvec"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entrole", description="Entity role detection and ranking toolkit.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus, print role frequencies, write canonical jsonl")
    p.add_argument("input")
    p.add_argument("--format", choices=["jsonl", "column"], default="jsonl")
    p.add_argument("--output", help="write the normalized corpus here")
    p.add_argument("--output-format", choices=["jsonl", "column"], default="jsonl")

    p = sub.add_parser("synth", help="generate a synthetic annotated corpus with ground truth")
    p.add_argument("--spec", help="JSON generator parameters")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--documents", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["jsonl", "column"], default="jsonl")

    p = sub.add_parser("stats", help="mention statistics and assumption rates")
    p.add_argument("input")
    p.add_argument("--format", choices=["jsonl", "column"], default="jsonl")
    p.add_argument("--out", required=True)

    p = sub.add_parser("phrases", help="score collocations or load relation phrases into a table")
    p.add_argument("input")
    p.add_argument("--format", choices=["jsonl", "column"], default="jsonl")
    p.add_argument("--mode", choices=["collocation", "relation"], default="collocation")
    p.add_argument("--relations", help="relation phrase list (mode relation)")
    p.add_argument("--delta", type=float, default=5.0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--output", required=True)

    for name, text in (("embed", "train word and role vectors"),
                       ("represent", "build cached entity representations"),
                       ("rank", "full ranking experiment and mAP reports"),
                       ("tag", "train and evaluate sequence taggers")):
        p = sub.add_parser(name, help=text)
        _common(p)
        _overrides(p)
        if name == "rank":
            p.add_argument("--reuse-models", action="store_true",
                           help="load models saved by 'embed' in OUT/models when present")
        if name == "tag":
            p.add_argument("--taggers", nargs="+", choices=["hmm", "crf"])
    return ap


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.deterministic is not None:
        cfg.deterministic = args.deterministic
    if args.out:
        cfg.out = args.out
    if args.format:
        cfg.corpus.format = args.format
    if args.corpus:
        cfg.corpus.path = args.corpus
    if args.radius is not None:
        cfg.ranking.radii = [args.radius]
    if args.n is not None:
        cfg.ranking.queries = ["TV" if args.n == 0 else f"TV-SW{args.n}"]
    if args.phrase_mode:
        cfg.phrases.modes = [args.phrase_mode]
    if args.context:
        cfg.ranking.contexts = [args.context]
    if args.representation:
        cfg.ranking.representations = [args.representation]
    if getattr(args, "taggers", None):
        cfg.tagging.taggers = list(args.taggers)
    cfg.validate()
    return cfg


def cmd_ingest(args) -> int:
    corpus = C.load_corpus(args.input, args.format)
    print(C.role_frequency_table(corpus))
    if args.output:
        C.save_corpus(corpus, args.output, args.output_format)
        logger.info("wrote %s (%d documents)", args.output, len(corpus))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = load_spec(args.spec) if args.spec else SyntheticSpec()
    if args.documents is not None:
        spec.n_documents = args.documents
    if args.noise is not None:
        spec.noise = args.noise
    spec.validate()
    with stage("synth"):
        result = generate_synthetic(args.seed, spec)
    os.makedirs(args.out, exist_ok=True)
    ext = "jsonl" if args.format == "jsonl" else "column"
    C.save_corpus(result.corpus, os.path.join(args.out, f"corpus.{ext}"), args.format)
    with open(os.path.join(args.out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(result.truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    # cue phrases as relation tuples, usable with phrase mode "relation"
    with open(os.path.join(args.out, "relations.tsv"), "w", encoding="utf-8") as fh:
        for role, cues in sorted(spec.cue_lexicon.items()):
            for cue in cues:
                fh.write(f"cues\t{role}\t{cue}\t-\n")
    print(json.dumps(result.truth["realized"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_stats(args) -> int:
    with stage("stats"):
        report = run_stats(args.input, args.format, args.out)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_phrases(args) -> int:
    corpus = C.load_corpus(args.input, args.format)
    pcfg = C.PreprocessConfig.default()
    if args.mode == "relation":
        if not args.relations:
            raise ConfigError("--relations is required for mode relation")
        table = load_relation_phrases(args.relations, pcfg)
    else:
        with stage("phrases"):
            table = collocation_scores(corpus_token_rows(C.preprocess(corpus, pcfg)),
                                       PhraseConfig(args.delta, args.threshold, args.passes,
                                                    stopwords=pcfg.stopwords))
    table.save(args.output)
    print(f"{len(table)} phrases -> {args.output}")
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = resolve_config(args)
    run_embed(cfg)
    return EXIT_OK


def cmd_represent(args) -> int:
    cfg = resolve_config(args)
    for (mode, kind, d, level), n in run_represent(cfg).items():
        print(f"{mode}\t{kind}\tN{d}\t{level}\tunrankable={n}")
    return EXIT_OK


def cmd_run_ranking(args) -> int:
    cfg = resolve_config(args)
    for rep in run_ranking(cfg, reuse_models=args.reuse_models):
        kk = min(5, rep.kmax)
        print(f"{rep.method}\t" + "\t".join(f"mAP@{k}={rep.map_at(k):.4f}" for k in range(1, kk + 1)))
    return EXIT_OK


def cmd_run_tagging(args) -> int:
    cfg = resolve_config(args)
    for name, rep in run_tagging(cfg).items():
        macro = rep.macro_precision
        print(f"{name}\taverage precision={'n/a' if macro is None else f'{100 * macro:.2f}'}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "stats": cmd_stats, "phrases": cmd_phrases,
    "embed": cmd_embed, "represent": cmd_represent, "rank": cmd_run_ranking, "tag": cmd_run_tagging,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, C.CorpusError, SyntheticSpecError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
