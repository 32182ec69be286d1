"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure (partial
artifacts are left in place). The HTTP backend reads its endpoint from
``GRADED_RANK_API_URL`` and an optional bearer token from
``GRADED_RANK_API_TOKEN``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backend import BackendError
from .config import ConfigError, load_config
from .core import SchemeError
from .evaluation import MetricReport, compare, evaluate, export_marginals, export_scatter
from .experiment import read_archive, rederive, run_experiment, sweep_scale, sweep_values
from .retrieval import (
    DEFAULT_B,
    DEFAULT_K1,
    FormatError,
    InvertedIndex,
    RunEntry,
    bm25_search,
    build_index,
    ranked_lists_from_run,
    read_corpus,
    read_qrels,
    read_queries,
    read_run,
    write_run,
)
from .scoring import softmax_probs

log = logging.getLogger("graded_rank")


def cmd_index(args) -> int:
    index = build_index(read_corpus(args.corpus), use_stopwords=args.stopwords)
    index.save(args.out)
    print(f"indexed {index.doc_count} documents, {len(index.postings)} terms -> {args.out}")
    return 0


def cmd_retrieve(args) -> int:
    if args.index:
        index = InvertedIndex.load(args.index)
    else:
        index = build_index(read_corpus(args.corpus), use_stopwords=args.stopwords)
    tag = args.tag or f"bm25-k1={args.k1:g}-b={args.b:g}"
    entries = []
    for q in read_queries(args.queries):
        for c in bm25_search(index, q.text, args.k, args.k1, args.b):
            entries.append(RunEntry(q.id, c.doc_id, c.first_stage_rank, c.first_stage_score, tag))
    write_run(args.out, entries)
    print(f"wrote {len(entries)} run lines -> {args.out}")
    return 0


def cmd_rerank(args) -> int:
    config = load_config(args.config, args.set)
    if args.from_archive:
        out = args.out or config.output_dir
        rederive(config, args.from_archive, out)
        print(f"re-derived run files from {args.from_archive} -> {out}")
        return 0
    result = run_experiment(config, progress=print)
    print(result.comparison.to_csv(), end="")
    if result.failures:
        print(f"WARNING: {len(result.failures)} query failures; see {Path(config.output_dir) / 'failures.json'}", file=sys.stderr)
    return result.exit_code


def cmd_eval(args) -> int:
    ranked = ranked_lists_from_run(read_run(args.run))
    report = evaluate(ranked.values(), read_qrels(args.qrels), args.k, args.gain, args.dataset, args.method)
    if args.out:
        report.save(args.out)
    mean = "n/a" if report.mean is None else f"{report.mean:.4f}"
    print(f"NDCG@{args.k} = {mean} over {len(report.per_query)} queries ({len(report.excluded)} excluded)")
    return 0


def cmd_compare(args) -> int:
    reports: dict[str, dict[str, MetricReport]] = {}
    for path in args.reports:
        rep = MetricReport.load(path)
        method = rep.method or Path(path).stem
        reports.setdefault(method, {})[rep.dataset or "default"] = rep
    comparison = compare(reports, args.baseline, args.alpha)
    if args.out_json:
        Path(args.out_json).write_text(json.dumps(comparison.to_json(), indent=2) + "\n", encoding="utf-8")
    text = comparison.to_csv()
    if args.out_csv:
        Path(args.out_csv).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_sweep_scale(args) -> int:
    config = load_config(args.config, args.set)
    rows = sweep_scale(config, args.lo, args.k, args.strategy, args.out)
    for row in rows:
        avg = row["average"]
        print(f"RG-S({args.lo},{row['k']}): {'n/a' if avg is None else f'{avg:.4f}'}")
    return 0


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value grid {text!r}; use e.g. 0,1,2") from None


def cmd_sweep_values(args) -> int:
    config = load_config(args.config, args.set)
    rows = sweep_values(config, args.grid, args.method, args.out)
    for row in rows:
        avg = row["average"]
        print(f"y={row['y_values']}: {'n/a' if avg is None else f'{avg:.4f}'}")
    return 0


def cmd_export_scatter(args) -> int:
    def scores(path):
        return {(e.query_id, e.doc_id): e.score for e in read_run(path)}

    n = export_scatter(scores(args.run_a), scores(args.run_b), args.out)
    print(f"wrote {n} rows -> {args.out}")
    return 0


def cmd_export_marginals(args) -> int:
    records = read_archive(args.archive)
    probs = {k: softmax_probs(r.log_likelihoods) for k, r in records.items()}
    n = export_marginals(probs, read_qrels(args.qrels), args.out)
    print(f"wrote {n} rows -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graded-rank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build a BM25 index from a BEIR corpus.jsonl")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stopwords", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="BM25 top-k retrieval into a TREC run file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--index")
    src.add_argument("--corpus")
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--k1", type=float, default=DEFAULT_K1)
    p.add_argument("--b", type=float, default=DEFAULT_B)
    p.add_argument("--stopwords", action="store_true")
    p.add_argument("--tag")
    p.set_defaults(func=cmd_retrieve)

    def with_config(p):
        p.add_argument("config")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field")

    p = sub.add_parser("rerank", help="run an experiment config (first stage, reranking, evaluation)")
    with_config(p)
    p.add_argument("--from-archive", help="re-derive run files from an archive directory instead of querying")
    p.add_argument("--out", help="output directory for --from-archive (default: config output_dir)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="NDCG@k of a run file")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--gain", choices=["linear", "exponential"], default="linear")
    p.add_argument("--dataset", default="")
    p.add_argument("--method", default="")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="comparison table with paired t-tests from report JSON files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--baseline")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out-json")
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep-scale", help="NDCG vs rating-scale size k")
    with_config(p)
    p.add_argument("--lo", type=int, default=0)
    p.add_argument("--k", type=int, nargs="+", required=True)
    p.add_argument("--strategy", default="expected_relevance", choices=["expected_relevance", "peak_relevance", "generated_label"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_scale)

    p = sub.add_parser("sweep-values", help="NDCG vs assigned relevance values")
    with_config(p)
    p.add_argument("--grid", type=_parse_grid, action="append", required=True, help="comma-separated values, repeatable")
    p.add_argument("--method")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_values)

    p = sub.add_parser("export-scatter", help="paired scores of two run files as CSV")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_scatter)

    p = sub.add_parser("export-marginals", help="per-label softmax probabilities from an archive, by grade")
    p.add_argument("--archive", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_marginals)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, SchemeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
