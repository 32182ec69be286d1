"""End-to-end experiment runner: first stage, LLM reranking, evaluation, sweeps and exports.

Layout of an output directory::

    resolved_config.json
    cache.jsonl                       raw backend outputs (unless cache disabled / relocated)
    runs/<dataset>/first_stage.trec
    runs/<dataset>/<method>.trec
    archive/<dataset>/<method>.jsonl  per-pair log-likelihoods, enough to re-derive every score
    reports/<dataset>/<method>.json
    exports/<dataset>/...csv
    comparison.json, comparison.csv
    failures.json                     only when some query failed
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import re
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backend import Backend, HttpBackend, ScoreRequest, ScoreResponse, ScoreStore, SyntheticMock, SyntheticMockConfig, TableMock, cached
from .config import ConfigError, ExperimentConfig, MethodSpec
from .core import Candidate, Document, LabelScheme, Qrels, Query, RankedList, check_log_likelihoods
from .evaluation import Comparison, MetricReport, compare, evaluate, export_marginals, export_scatter
from .prompt import PromptRenderer, TemplateKind, TruncationPolicy
from .retrieval import (
    bm25_search,
    build_index,
    candidates_from_run,
    read_corpus,
    read_qrels,
    read_queries,
    read_run,
    run_entries,
    write_run,
)
from .scoring import (
    DerivationStrategy,
    argmax_label,
    binary_yes_no,
    expected_relevance,
    generated_label_score,
    peak_relevance,
    query_generation_score,
    rank,
    softmax_probs,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairRecord:
    """Raw backend output for one (query, candidate) pair under one method."""

    query_id: str
    doc_id: str
    first_stage_rank: int
    first_stage_score: float
    log_likelihoods: tuple[float, ...]
    token_log_likelihoods: tuple[tuple[float, ...], ...] | None = None
    generated: str | None = None

    @property
    def candidate(self) -> Candidate:
        return Candidate(self.doc_id, self.first_stage_score, self.first_stage_rank)

    def to_json(self) -> dict:
        out = {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "first_stage_rank": self.first_stage_rank,
            "first_stage_score": self.first_stage_score,
            "log_likelihoods": list(self.log_likelihoods),
        }
        if self.token_log_likelihoods is not None:
            out["token_log_likelihoods"] = [list(t) for t in self.token_log_likelihoods]
        if self.generated is not None:
            out["generated"] = self.generated
        return out

    @classmethod
    def from_json(cls, row: Mapping) -> PairRecord:
        toks = row.get("token_log_likelihoods")
        return cls(
            row["query_id"],
            row["doc_id"],
            int(row["first_stage_rank"]),
            float(row["first_stage_score"]),
            tuple(row["log_likelihoods"]),
            None if toks is None else tuple(tuple(t) for t in toks),
            row.get("generated"),
        )


@dataclass
class Dataset:
    name: str
    corpus: dict[str, Document]
    queries: list[Query]
    qrels: Qrels


@dataclass
class MethodResult:
    method: str
    dataset: str
    ranked: dict[str, RankedList]
    report: MetricReport
    records: dict[tuple[str, str], PairRecord]
    scores: dict[tuple[str, str], float]
    failures: list[dict] = field(default_factory=list)
    parse_failures: int = 0


@dataclass
class ExperimentResult:
    results: dict[str, dict[str, MethodResult]]  # dataset -> method -> result
    comparison: Comparison
    failures: list[dict]
    backend_calls: int = 0

    @property
    def exit_code(self) -> int:
        return 2 if self.failures else 0


# --- score derivation -------------------------------------------------------


def derive_score(method: MethodSpec, scheme: LabelScheme | None, record: PairRecord) -> tuple[float, bool]:
    """Ranking score for one pair from its raw record; second item is False on a label parse failure."""
    where = f"{method.name} {record.query_id}/{record.doc_id}"
    strategy = method.strategy
    if strategy is DerivationStrategy.QUERY_GENERATION:
        tokens = record.token_log_likelihoods[0] if record.token_log_likelihoods else record.log_likelihoods
        check_log_likelihoods(tokens, where=where)
        return query_generation_score(tokens, method.qg_normalization), True
    s = check_log_likelihoods(record.log_likelihoods, len(scheme), where=where)
    if strategy is DerivationStrategy.EXPECTED_RELEVANCE:
        return expected_relevance(s, scheme), True
    if strategy is DerivationStrategy.PEAK_RELEVANCE:
        return peak_relevance(s, scheme), True
    if strategy is DerivationStrategy.BINARY_YES_NO:
        return binary_yes_no(s[0], s[1]), True
    if strategy is DerivationStrategy.GENERATED_LABEL:
        text = record.generated if record.generated is not None else argmax_label(s, scheme)
        result = generated_label_score(text, scheme, record.first_stage_rank)
        return result.score, result.parsed
    raise ValueError(f"unhandled strategy {strategy}")


def rank_records(method: MethodSpec, records: Mapping[tuple[str, str], PairRecord], query_order: Sequence[str]):
    """Derive scores and rank per query. Returns (ranked lists, scores, parse failure count)."""
    scheme = method.label_scheme()
    by_query: dict[str, list[PairRecord]] = {}
    for rec in records.values():
        by_query.setdefault(rec.query_id, []).append(rec)
    ranked: dict[str, RankedList] = {}
    scores: dict[tuple[str, str], float] = {}
    parse_failures = 0
    for qid in query_order:
        recs = sorted(by_query.get(qid, []), key=lambda r: r.first_stage_rank)
        values = []
        for rec in recs:
            score, parsed = derive_score(method, scheme, rec)
            parse_failures += not parsed
            scores[(qid, rec.doc_id)] = score
            values.append(score)
        ranked[qid] = rank(qid, [r.candidate for r in recs], values)
    return ranked, scores, parse_failures


# --- running ----------------------------------------------------------------


def load_dataset(spec) -> Dataset:
    corpus = {d.id: d for d in read_corpus(spec.corpus_path)}
    return Dataset(spec.name, corpus, read_queries(spec.queries_path), read_qrels(spec.qrels_path))


def first_stage(config: ExperimentConfig, spec, dataset: Dataset) -> tuple[dict[str, list[Candidate]], str]:
    fs = config.first_stage
    if fs.mode == "run_file":
        entries = read_run(spec.run_path)
        missing = sorted({e.doc_id for e in entries} - set(dataset.corpus))
        if missing:
            raise ConfigError([f"run file {spec.run_path} names documents missing from the corpus: {missing[:5]}"])
        tag = entries[0].tag if entries else "run"
        return candidates_from_run(entries, fs.k), tag
    index = build_index(list(dataset.corpus.values()), use_stopwords=fs.stopwords)
    tag = f"bm25-k1={fs.k1:g}-b={fs.b:g}" + ("-stop" if fs.stopwords else "")
    out = {q.id: bm25_search(index, q.text, fs.k, fs.k1, fs.b) for q in dataset.queries}
    return out, tag


def make_backend(spec: Mapping, qrels: Qrels, seed: int) -> Backend:
    kind = spec["type"]
    if kind == "mock_table":
        return TableMock.from_file(spec["path"])
    if kind == "synthetic":
        planted = read_qrels(spec["planted_qrels"]) if spec.get("planted_qrels") else qrels
        cal = {int(g): v for g, v in spec["calibration"].items()}
        extra = tuple({int(g): v for g, v in c.items()} for c in spec.get("extra_calibrations", []))
        return SyntheticMock(
            SyntheticMockConfig(
                planted,
                cal,
                float(spec.get("noise_sigma", 0.0)),
                int(spec["seed"]) if spec.get("seed") is not None else seed,
                extra,
            )
        )
    if kind == "http":
        return HttpBackend(
            spec.get("base_url"),
            spec.get("token"),
            timeout=float(spec.get("timeout", 60.0)),
            max_attempts=int(spec.get("max_attempts", 5)),
            backoff_base=float(spec.get("backoff_base", 1.0)),
            max_tokens=int(spec.get("max_tokens", 16)),
        )
    raise ConfigError([f"unknown backend type {kind!r}"])


def safe_name(name: str) -> str:
    return re.sub(r"[^\w.\-()+,=@]", "_", name)


def score_method(
    method: MethodSpec,
    dataset: Dataset,
    candidates: Mapping[str, Sequence[Candidate]],
    backend: Backend,
    renderer: PromptRenderer,
    concurrency: int,
) -> tuple[dict[tuple[str, str], PairRecord], list[dict]]:
    """Query the backend for every candidate pair; failed queries are reported, not raised."""
    scheme = method.label_scheme()
    prefix = method.prompt_prefix()
    queries = {q.id: q for q in dataset.queries}
    want_text = (
        method.strategy is DerivationStrategy.GENERATED_LABEL and method.generated_source == "generate"
    )

    def task(qid: str, cand: Candidate) -> PairRecord:
        doc = dataset.corpus[cand.doc_id]
        prompt = renderer.render(method.template, queries[qid], doc, scheme, prefix)
        response: ScoreResponse = backend.score(ScoreRequest(prompt.text, prompt.continuations, qid, cand.doc_id))
        generated = None
        if want_text:
            generated = backend.generate(
                prompt.text, continuations=prompt.continuations, query_id=qid, doc_id=cand.doc_id
            )
        return PairRecord(
            qid,
            cand.doc_id,
            cand.first_stage_rank,
            cand.first_stage_score,
            response.log_likelihoods,
            response.token_log_likelihoods if method.template is TemplateKind.QG else None,
            generated,
        )

    jobs = [(q.id, c) for q in dataset.queries for c in candidates.get(q.id, [])]
    records: dict[tuple[str, str], PairRecord] = {}
    errors: dict[str, str] = {}
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {pool.submit(task, qid, c): (qid, c.doc_id) for qid, c in jobs}
        for fut, (qid, doc_id) in futures.items():
            try:
                records[(qid, doc_id)] = fut.result()
            except Exception as exc:  # noqa: BLE001 - any failure drops just this query
                errors.setdefault(qid, f"{doc_id}: {type(exc).__name__}: {exc}")
    failures = [
        {"dataset": dataset.name, "method": method.name, "query_id": qid, "error": errors[qid]}
        for qid in sorted(errors)
    ]
    for qid in errors:
        for key in [k for k in records if k[0] == qid]:
            del records[key]
    return records, failures


def write_archive(path: Path, records: Mapping[tuple[str, str], PairRecord], query_order: Sequence[str]) -> None:
    order = {q: i for i, q in enumerate(query_order)}
    rows = sorted(records.values(), key=lambda r: (order.get(r.query_id, len(order)), r.query_id, r.first_stage_rank))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r.to_json()) + "\n" for r in rows), encoding="utf-8")


def read_archive(path: str | Path) -> dict[tuple[str, str], PairRecord]:
    records = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = PairRecord.from_json(json.loads(line))
                records[(rec.query_id, rec.doc_id)] = rec
    return records


def run_experiment(
    config: ExperimentConfig,
    backend_override: Backend | None = None,
    progress: Callable[[str], None] | None = None,
) -> ExperimentResult:
    """Run every method on every dataset and write all artifacts under ``config.output_dir``.

    ``backend_override`` replaces every configured backend (it is still
    wrapped by the cache); tests use it to count backend calls.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    say = progress or (lambda msg: log.info(msg))

    cache_cfg = config.cache
    if cache_cfg.get("enabled", True):
        store = ScoreStore(cache_cfg.get("path") or out / "cache.jsonl")
    else:
        store = ScoreStore(None)
    renderer = PromptRenderer(
        templates=config.prompt.load_templates(),
        truncation=TruncationPolicy(config.prompt.truncation_chars),
        continuation_prefix=config.prompt.continuation_prefix,
    )

    results: dict[str, dict[str, MethodResult]] = {}
    failures: list[dict] = []
    inner_backends: list[Backend] = []
    for ds_spec in config.datasets:
        dataset = load_dataset(ds_spec)
        candidates, tag = first_stage(config, ds_spec, dataset)
        query_order = [q.id for q in dataset.queries]
        fs_lists = [rank(q, candidates.get(q, []), [c.first_stage_score for c in candidates.get(q, [])]) for q in query_order]
        write_run(out / "runs" / safe_name(dataset.name) / "first_stage.trec", run_entries(fs_lists, tag))

        backends: dict[str, Backend] = {}
        results[dataset.name] = {}
        for method in config.methods:
            spec = method.backend or config.backend
            key = json.dumps(spec, sort_keys=True)
            if key not in backends:
                inner = backend_override or make_backend(spec, dataset.qrels, config.seed)
                if inner not in inner_backends:
                    inner_backends.append(inner)
                backends[key] = cached(inner, store)
            say(f"[{dataset.name}] scoring {method.name}")
            records, method_failures = score_method(
                method, dataset, candidates, backends[key], renderer, config.concurrency
            )
            failed = {f["query_id"] for f in method_failures}
            ranked, scores, parse_failures = rank_records(
                method, records, [q for q in query_order if q not in failed]
            )
            report = evaluate(
                ranked.values(), dataset.qrels, config.eval.k, config.eval.gain_mode, dataset.name, method.name
            )
            result = MethodResult(method.name, dataset.name, ranked, report, records, scores, method_failures, parse_failures)
            results[dataset.name][method.name] = result
            failures += method_failures
            _write_method(out, dataset.name, method, result, query_order)
            if method_failures:
                say(f"[{dataset.name}] {method.name}: {len(method_failures)} queries FAILED and were excluded")
            if parse_failures:
                say(f"[{dataset.name}] {method.name}: {parse_failures} generated labels could not be parsed")
        _write_exports(out, config, dataset, results[dataset.name])

    reports = {
        m.name: {ds: results[ds][m.name].report for ds in results} for m in config.methods
    }
    comparison = compare(reports, config.eval.baseline, config.eval.alpha)
    (out / "comparison.json").write_text(json.dumps(comparison.to_json(), indent=2) + "\n", encoding="utf-8")
    (out / "comparison.csv").write_text(comparison.to_csv(), encoding="utf-8")
    failures_path = out / "failures.json"
    if failures:
        failures_path.write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    elif failures_path.exists():
        failures_path.unlink()
    calls = sum(b.score_calls + b.generate_calls for b in inner_backends)
    return ExperimentResult(results, comparison, failures, calls)


def _write_method(out: Path, dataset: str, method: MethodSpec, result: MethodResult, query_order) -> None:
    ds = safe_name(dataset)
    name = safe_name(method.name)
    ordered = [result.ranked[q] for q in query_order if q in result.ranked]
    write_run(out / "runs" / ds / f"{name}.trec", run_entries(ordered, safe_name(f"{method.name}-{method.strategy.value}")))
    write_archive(out / "archive" / ds / f"{name}.jsonl", result.records, query_order)
    result.report.save(out / "reports" / ds / f"{name}.json")


def _write_exports(out: Path, config: ExperimentConfig, dataset: Dataset, results: Mapping[str, MethodResult]) -> None:
    ds_dir = out / "exports" / safe_name(dataset.name)
    for a, b in config.exports.get("scatter", []):
        if results[a].scores and results[b].scores:
            export_scatter(results[a].scores, results[b].scores, ds_dir / f"scatter_{safe_name(a)}__{safe_name(b)}.csv")
    methods = {m.name: m for m in config.methods}
    for name in config.exports.get("marginals", []):
        if methods[name].template is TemplateKind.QG or not results[name].records:
            continue
        probs = {k: softmax_probs(r.log_likelihoods) for k, r in results[name].records.items()}
        export_marginals(probs, dataset.qrels, ds_dir / f"marginals_{safe_name(name)}.csv")


def rederive(config: ExperimentConfig, archive_dir: str | Path, out_dir: str | Path) -> dict[str, dict[str, MethodResult]]:
    """Rebuild run files and reports from archived log-likelihoods, without any backend."""
    archive_dir, out_dir = Path(archive_dir), Path(out_dir)
    results: dict[str, dict[str, MethodResult]] = {}
    for ds_spec in config.datasets:
        dataset = load_dataset(ds_spec)
        query_order = [q.id for q in dataset.queries]
        results[dataset.name] = {}
        for method in config.methods:
            path = archive_dir / safe_name(dataset.name) / f"{safe_name(method.name)}.jsonl"
            records = read_archive(path)
            present = {r.query_id for r in records.values()}
            ranked, scores, parse_failures = rank_records(method, records, [q for q in query_order if q in present])
            report = evaluate(ranked.values(), dataset.qrels, config.eval.k, config.eval.gain_mode, dataset.name, method.name)
            result = MethodResult(method.name, dataset.name, ranked, report, records, scores, [], parse_failures)
            results[dataset.name][method.name] = result
            _write_method(out_dir, dataset.name, method, result, query_order)
    return results


# --- sweeps -----------------------------------------------------------------


def _table_csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def sweep_scale(
    config: ExperimentConfig,
    lo: int,
    k_values: Sequence[int],
    strategy: str = "expected_relevance",
    out_path: str | Path | None = None,
    backend_override: Backend | None = None,
) -> list[dict]:
    """Average NDCG@k for rating scales lo..k, one row per k."""
    if not k_values:
        raise ConfigError(["k_values must be non-empty"])
    methods = tuple(
        MethodSpec(f"RG-S({lo},{k})", TemplateKind.RG_SCALE, {"scale": [lo, k]}, strategy=strategy)
        for k in k_values
    )
    sub = config.replace(
        methods=methods,
        output_dir=str(Path(config.output_dir) / f"sweep_scale_lo{lo}"),
        exports={},
        eval=_without_baseline(config),
    )
    result = run_experiment(sub, backend_override)
    rows = []
    for k, m in zip(k_values, methods):
        row = {"k": k}
        row.update({d: result.comparison.means[m.name][d] for d in result.comparison.datasets})
        row["average"] = result.comparison.averages[m.name]
        rows.append(row)
    path = Path(out_path) if out_path else Path(config.output_dir) / f"sweep_scale_lo{lo}.csv"
    _write_rows(path, ["k", *result.comparison.datasets, "average"], rows)
    return rows


def sweep_values(
    config: ExperimentConfig,
    y_grids: Sequence[Sequence[float]],
    method_name: str | None = None,
    out_path: str | Path | None = None,
    backend_override: Backend | None = None,
) -> list[dict]:
    """Average NDCG@k of one labelled method under different relevance-value vectors."""
    base = _pick_method(config, method_name)
    scheme = base.label_scheme()
    errors = []
    for grid in y_grids:
        if len(grid) != len(scheme):
            errors.append(f"grid {list(grid)} has {len(grid)} values for a {len(scheme)}-label scheme")
        elif any(b < a for a, b in zip(grid, grid[1:])):
            errors.append(f"grid {list(grid)} is decreasing")
    if not y_grids:
        errors.append("no value grids given")
    if errors:
        raise ConfigError(errors)
    labels = [_grid_label(g) for g in y_grids]
    methods = tuple(
        MethodSpec(**{**base.to_dict(), "name": f"{base.name}@y={lab}", "values": list(g), "strategy": "expected_relevance"})
        for g, lab in zip(y_grids, labels)
    )
    sub = config.replace(
        methods=methods,
        output_dir=str(Path(config.output_dir) / f"sweep_values_{safe_name(base.name)}"),
        exports={},
        eval=_without_baseline(config),
    )
    result = run_experiment(sub, backend_override)
    rows = []
    for lab, m in zip(labels, methods):
        row = {"y_values": lab}
        row.update({d: result.comparison.means[m.name][d] for d in result.comparison.datasets})
        row["average"] = result.comparison.averages[m.name]
        rows.append(row)
    path = Path(out_path) if out_path else Path(config.output_dir) / f"sweep_values_{safe_name(base.name)}.csv"
    _write_rows(path, ["y_values", *result.comparison.datasets, "average"], rows)
    return rows


def _pick_method(config: ExperimentConfig, name: str | None) -> MethodSpec:
    if name is not None:
        for m in config.methods:
            if m.name == name:
                return m
        raise ConfigError([f"no method named {name!r}"])
    for m in config.methods:
        if m.template in (TemplateKind.RG_TEXTUAL, TemplateKind.RG_SCALE):
            return m
    raise ConfigError(["no labelled (RG_TEXTUAL / RG_SCALE) method to sweep"])


def _grid_label(grid: Sequence[float]) -> str:
    return "[" + ",".join(f"{float(v):g}" for v in grid) + "]"


def _without_baseline(config: ExperimentConfig):
    return dataclasses.replace(config.eval, baseline=None)


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Mapping]) -> None:
    table = [list(header)]
    for row in rows:
        table.append([_cell(row.get(h)) for h in header])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_table_csv(table), encoding="utf-8")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.6f}"
    return str(value)
