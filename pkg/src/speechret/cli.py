"""Command-line entry points.

Subcommands: generate, train-tagger, train, evaluate, retrieve, sweep,
gradcheck. Exit codes: 0 success, 1 validation error, 2 runtime failure.
Relative output paths resolve under $SPEECHRET_OUT when set.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import evaluation as E
from . import figures
from . import sweep as SW
from . import training as TR
from .config import (ExperimentConfig, OUTPUT_ROOT_ENV, load_experiment_config,
                     resolve_output_path)
from .corpus import (generate_corpus, load_corpus, load_judgments, save_corpus,
                     save_judgments, select_keywords)
from .errors import ConfigError, SpeechretError, VocabularyError
from .tagger import TaggerConfig, load_tagger, save_tagger, train_tagger
from .verify import run_verification_suite

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _add_config_args(parser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override one config key (repeatable)")


def _experiment(args) -> ExperimentConfig:
    return load_experiment_config(args.config, args.sets)


# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    config = _experiment(args)
    config.corpus.validate()
    out_dir = resolve_output_path(args.out)
    corpus, judgments = generate_corpus(config.corpus)
    save_corpus(corpus, out_dir)
    save_judgments(judgments, os.path.join(out_dir, "judgments.csv"))
    splits = {s: len(corpus.split_items(s)) for s in ("A", "B", "dev", "test")}
    print(f"corpus written to {out_dir}")
    print(f"  items: {len(corpus.items)}  splits: {splits}")
    print(f"  vocabulary: {len(corpus.vocabulary)} words "
          f"({int(corpus.stopword.sum())} stopwords)")
    print(f"  judgments: {len(judgments.queries)} queries x "
          f"{len(judgments.utterance_ids)} test utterances")
    return EXIT_OK


def cmd_train_tagger(args) -> int:
    config = _experiment(args)
    config.tagger.validate()
    corpus = load_corpus(resolve_output_path(args.corpus))
    judgments = load_judgments(
        os.path.join(resolve_output_path(args.corpus), "judgments.csv"))
    tag_vocab = select_keywords(corpus, config.n_vis,
                                must_include=judgments.queries)
    tagger_cfg = TaggerConfig(
        d_img=corpus.d_img, hidden=config.tagger.hidden,
        n_vis=len(tag_vocab), feature_layer=config.tagger.feature_layer,
        steps=config.tagger.steps, batch_size=config.tagger.batch_size,
        learning_rate=config.tagger.learning_rate, seed=config.tagger.seed)
    params, log = train_tagger(corpus.split_items("A"), tag_vocab,
                               corpus.vocabulary, tagger_cfg)
    out = resolve_output_path(args.out)
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_tagger(params, out)
    print(f"tagger written to {out}")
    print(f"  tags: {len(tag_vocab)}  steps: {len(log)}  "
          f"final loss: {log[-1]['loss']:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _experiment(args)
    train_cfg = SW.system_train_config(config.train, args.system,
                                       args.fraction, args.seed)
    train_cfg.validate()
    corpus_dir = resolve_output_path(args.corpus)
    corpus = load_corpus(corpus_dir)
    judgments = load_judgments(os.path.join(corpus_dir, "judgments.csv"))
    tagger = load_tagger(resolve_output_path(args.tagger))
    run_dir = resolve_output_path(args.run)
    result = TR.train(corpus, tagger, train_cfg, judgments.queries, run_dir,
                      arch=config.model,
                      resume_from=args.resume_from)
    figures.render_training_curves(TR.read_log(result.log_path),
                                   os.path.join(run_dir, "training_curve.png"))
    print(f"run complete: {result.run_dir}")
    print(f"  steps: {result.steps_completed}  "
          f"best dev F1: {result.best_f1}  best step: {result.best_step}  "
          f"early stop: {result.stopped_early}")
    return EXIT_OK


def _heads_for_meta(meta) -> list[str]:
    heads = list(meta.get("trained_heads", []))
    if {"vis", "bow"} <= set(heads):
        heads.append(E.HEAD_ENSEMBLE)
    return heads


def cmd_evaluate(args) -> int:
    run_dir = resolve_output_path(args.run)
    corpus_dir = resolve_output_path(args.corpus)
    corpus = load_corpus(corpus_dir)
    judgments_path = args.judgments or os.path.join(corpus_dir, "judgments.csv")
    judgments = load_judgments(judgments_path)
    params, _, _, meta = TR.load_checkpoint(
        os.path.join(run_dir, args.checkpoint))
    out_dir = resolve_output_path(args.out or os.path.join(run_dir, "eval"))
    heads = _heads_for_meta(meta)
    if not heads:
        raise ConfigError("run has no trained heads to evaluate")
    os.makedirs(out_dir, exist_ok=True)
    test_items = corpus.split_items(args.split)
    for head in heads:
        matrix = E.score_utterances(params, test_items, judgments.queries,
                                    head, meta["tag_vocabulary"],
                                    meta["bow_vocabulary"])
        report = E.evaluate(matrix, judgments)
        base = os.path.join(out_dir, f"report_{head}")
        E.write_report_json(report, base + ".json")
        E.write_report_csv(report, base + ".csv")
        figures.render_metric_report(report, base + ".png")
        agg = report.aggregates
        print(f"[{head}] AP={agg['average_precision']:.4f} "
              f"rho={agg['spearman_rho']:.4f} P@10={agg['p_at_10']:.4f} "
              f"P@N={agg['p_at_n']:.4f}")
    print(f"reports written to {out_dir}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    run_dir = resolve_output_path(args.run)
    corpus_dir = resolve_output_path(args.corpus)
    corpus = load_corpus(corpus_dir)
    params, _, _, meta = TR.load_checkpoint(
        os.path.join(run_dir, args.checkpoint))
    head = args.head
    if head == "auto":
        heads = _heads_for_meta(meta)
        head = E.HEAD_ENSEMBLE if E.HEAD_ENSEMBLE in heads else heads[0]
    items = corpus.split_items(args.split)
    matrix = E.score_utterances(params, items, [args.query], head,
                                meta["tag_vocabulary"], meta["bow_vocabulary"])
    scores = matrix.scores[0]
    order = sorted(range(len(items)),
                   key=lambda i: (-scores[i], items[i].item_id))
    shown = 0
    print(f"query {args.query!r} via {head} head "
          f"(threshold {args.threshold}, top {args.top_k}):")
    for i in order:
        if scores[i] <= args.threshold or shown >= args.top_k:
            break
        transcript = ""
        if items[i].transcript is not None:
            transcript = " ".join(corpus.words(items[i].transcript))
        print(f"  {scores[i]:.4f}  {items[i].item_id}  {transcript}")
        shown += 1
    if shown == 0:
        print("  (no utterance above threshold)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _experiment(args)
    config.validate()
    out_dir = resolve_output_path(args.out)
    os.makedirs(out_dir, exist_ok=True)

    corpus_dir = os.path.join(out_dir, "corpus")
    if not os.path.exists(os.path.join(corpus_dir, "manifest.json")):
        corpus, judgments = generate_corpus(config.corpus)
        save_corpus(corpus, corpus_dir)
        save_judgments(judgments, os.path.join(corpus_dir, "judgments.csv"))
        print(f"corpus generated at {corpus_dir}")
    corpus, judgments = SW.load_sweep_inputs(corpus_dir)

    tagger_path = os.path.join(out_dir, "tagger.ckpt")
    if not os.path.exists(tagger_path):
        tag_vocab = select_keywords(corpus, config.n_vis,
                                    must_include=judgments.queries)
        tagger_cfg = TaggerConfig(
            d_img=corpus.d_img, hidden=config.tagger.hidden,
            n_vis=len(tag_vocab), feature_layer=config.tagger.feature_layer,
            steps=config.tagger.steps, batch_size=config.tagger.batch_size,
            learning_rate=config.tagger.learning_rate, seed=config.tagger.seed)
        tagger, _ = train_tagger(corpus.split_items("A"), tag_vocab,
                                 corpus.vocabulary, tagger_cfg)
        save_tagger(tagger, tagger_path)
        print(f"tagger trained at {tagger_path}")
    tagger = load_tagger(tagger_path)

    start = time.time()
    report = SW.run_sweep(corpus, tagger, judgments, config, out_dir,
                          progress=lambda label: print(f"  cell: {label}",
                                                       flush=True))
    SW.write_report(report, out_dir)
    figures.render_sweep_figures(report, out_dir)
    print(f"sweep finished in {time.time() - start:.0f}s; "
          f"{len(report.cells)} report rows, {len(report.failures)} failures")
    print(f"tables and figures in {out_dir}")
    if report.failures:
        for failure in report.failures:
            print(f"  FAILED {failure['system']} f={failure['fraction']} "
                  f"s={failure['seed']}: {failure['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = run_verification_suite(num_seeds=args.seeds, epsilon=args.eps)
    failed = False
    for report in sorted(reports, key=lambda r: r.op):
        print(report.line(args.tol))
        failed = failed or not report.passed(args.tol)
    if failed:
        print("gradient verification FAILED", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"all {len(reports)} checks passed over {args.seeds} seeds")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechret",
        description="Semantic speech retrieval experiments on synthetic "
                    "paired image/speech corpora.",
        epilog=f"Relative output paths resolve under ${OUTPUT_ROOT_ENV} "
               f"when it is set.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    _add_config_args(p)
    p.add_argument("--out", default="corpus")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train-tagger", help="train the image tagger on set A")
    _add_config_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="tagger.ckpt")
    p.set_defaults(fn=cmd_train_tagger)

    p = sub.add_parser("train", help="train one speech model")
    _add_config_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--tagger", required=True)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--system", default="mtl",
                   choices=["mtl", "visual-baseline", "textual-baseline"])
    p.add_argument("--fraction", type=float, default=1.0,
                   help="fraction of transcripts available")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume-from", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="semantic retrieval metrics for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--judgments", help="defaults to corpus/judgments.csv")
    p.add_argument("--checkpoint", default="best.ckpt")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="defaults to <run>/eval")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("retrieve", help="rank utterances for one query word")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--head", default="auto",
                   choices=["auto", "vis", "bow", "ensemble"])
    p.add_argument("--checkpoint", default="best.ckpt")
    p.add_argument("--split", default="test")
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("sweep", help="full supervision-fraction sweep")
    _add_config_args(p)
    p.add_argument("--out", default="sweep")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; that is a validation failure here
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        return args.fn(args)
    except (ConfigError, VocabularyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SpeechretError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
