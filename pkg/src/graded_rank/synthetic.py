"""Planted-relevance collections for desk-scale studies with the synthetic backend."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import SyntheticMock, SyntheticMockConfig
from .config import MethodSpec
from .core import Candidate, Document, Qrels, Query
from .evaluation import evaluate
from .experiment import Dataset, rank_records, score_method
from .prompt import PromptRenderer
from .retrieval import QRELS_HEADER

# Per-grade mean log-likelihoods over the three RG3L labels: each grade puts its
# mass on its own label, so grade-1 pairs sit between grades 0 and 2 and both the
# peak-label value and the expected relevance rise with the grade.
CALIBRATION_3L = {0: [-0.2, -2.5, -4.5], 1: [-2.5, -0.3, -2.5], 2: [-4.5, -2.5, -0.2]}
# A two-label reader that cannot tell grade 1 from grade 2.
CALIBRATION_2L_COLLAPSED = {0: [-0.2, -3.0], 1: [-3.0, -0.2], 2: [-3.0, -0.2]}


@dataclass
class PlantedCollection:
    dataset: Dataset
    candidates: dict[str, list[Candidate]]


def planted_collection(
    seed: int,
    n_queries: int = 20,
    docs_per_query: int = 30,
    grade_weights: Sequence[float] = (0.6, 0.25, 0.15),
    name: str = "synthetic",
) -> PlantedCollection:
    """Random graded judgments over disjoint per-query candidate pools.

    The first-stage order is a random permutation, so any ranking quality
    comes from the reranker. Each query gets at least one document of the
    top grade.
    """
    rng = np.random.default_rng(seed)
    weights = np.asarray(grade_weights, dtype=float)
    weights = weights / weights.sum()
    top = len(weights) - 1
    queries, corpus, judgments, candidates = [], {}, {}, {}
    for i in range(n_queries):
        qid = f"q{i}"
        queries.append(Query(qid, f"synthetic query {i}"))
        grades = rng.choice(len(weights), size=docs_per_query, p=weights)
        if not (grades == top).any():
            grades[rng.integers(docs_per_query)] = top
        order = rng.permutation(docs_per_query)
        cands = []
        for r, j in enumerate(order, start=1):
            did = f"{qid}-d{j}"
            corpus[did] = Document(did, "", f"synthetic document {j} for query {i}")
            judgments[(qid, did)] = int(grades[j])
            cands.append(Candidate(did, float(docs_per_query - r), r))
        candidates[qid] = cands
    return PlantedCollection(Dataset(name, corpus, queries, Qrels(judgments)), candidates)


def write_collection(collection: PlantedCollection, directory: str | Path) -> dict[str, str]:
    """Write corpus.jsonl, queries.tsv, qrels.tsv and a first-stage run.trec; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ds = collection.dataset
    paths = {
        "corpus_path": directory / "corpus.jsonl",
        "queries_path": directory / "queries.tsv",
        "qrels_path": directory / "qrels.tsv",
        "run_path": directory / "run.trec",
    }
    paths["corpus_path"].write_text(
        "".join(json.dumps({"_id": d.id, "title": d.title, "text": d.body}) + "\n" for d in ds.corpus.values()),
        encoding="utf-8",
    )
    paths["queries_path"].write_text("".join(f"{q.id}\t{q.text}\n" for q in ds.queries), encoding="utf-8")
    paths["qrels_path"].write_text(
        QRELS_HEADER + "\n" + "".join(f"{q}\t{d}\t{g}\n" for (q, d), g in ds.qrels.items()), encoding="utf-8"
    )
    paths["run_path"].write_text(
        "".join(
            f"{q.id} Q0 {c.doc_id} {c.first_stage_rank} {c.first_stage_score:.6f} random\n"
            for q in ds.queries
            for c in collection.candidates[q.id]
        ),
        encoding="utf-8",
    )
    return {k: str(v) for k, v in paths.items()}


def kendall_tau(order_a: Sequence[str], order_b: Sequence[str]) -> float:
    """Kendall tau between two orderings of the same items (no ties possible)."""
    if sorted(order_a) != sorted(order_b) or len(set(order_a)) != len(order_a):
        raise ValueError("orderings must be permutations of the same distinct items")
    n = len(order_a)
    if n < 2:
        return 1.0
    pos = {d: i for i, d in enumerate(order_b)}
    seq = [pos[d] for d in order_a]
    discordant = sum(1 for i in range(n) for j in range(i + 1, n) if seq[i] > seq[j])
    pairs = n * (n - 1) // 2
    return 1.0 - 2.0 * discordant / pairs


def _method(name: str, preset: str, strategy: str) -> MethodSpec:
    return MethodSpec(name, "RG_TEXTUAL", {"preset": preset}, strategy=strategy)


@dataclass
class AgreementResult:
    taus: dict[str, float]
    identical: dict[str, bool]
    ndcg_er: float | None
    ndcg_pr: float | None

    @property
    def mean_tau(self) -> float:
        return float(np.mean(list(self.taus.values())))


def er_pr_agreement(
    collection: PlantedCollection,
    calibration=CALIBRATION_3L,
    noise_sigma: float = 0.0,
    seed: int = 0,
    concurrency: int = 8,
) -> AgreementResult:
    """Rank one set of RG3L log-likelihoods by ER and by PR and compare the two orderings."""
    ds = collection.dataset
    mock = SyntheticMock(SyntheticMockConfig(ds.qrels, calibration, noise_sigma, seed))
    er = _method("ER", "RG3L", "expected_relevance")
    pr = _method("PR", "RG3L", "peak_relevance")
    records, failures = score_method(er, ds, collection.candidates, mock, PromptRenderer(), concurrency)
    if failures:
        raise RuntimeError(f"synthetic scoring failed: {failures[0]['error']}")
    order = [q.id for q in ds.queries]
    by_er, _, _ = rank_records(er, records, order)
    by_pr, _, _ = rank_records(pr, records, order)
    return AgreementResult(
        taus={q: kendall_tau(by_er[q].doc_ids, by_pr[q].doc_ids) for q in order},
        identical={q: by_er[q].doc_ids == by_pr[q].doc_ids for q in order},
        ndcg_er=evaluate(by_er.values(), ds.qrels).mean,
        ndcg_pr=evaluate(by_pr.values(), ds.qrels).mean,
    )


def granularity_trial(
    seed: int,
    noise_sigma: float = 1.0,
    calibration_3l=CALIBRATION_3L,
    calibration_2l=CALIBRATION_2L_COLLAPSED,
    n_queries: int = 20,
    concurrency: int = 8,
) -> tuple[float, float]:
    """Mean NDCG@10 of ER under RG3L and RG2L on one planted collection; returns (3-label, 2-label)."""
    col = planted_collection(seed, n_queries=n_queries)
    ds = col.dataset
    mock = SyntheticMock(SyntheticMockConfig(ds.qrels, calibration_3l, noise_sigma, seed, (calibration_2l,)))
    order = [q.id for q in ds.queries]
    out = []
    for spec in (_method("RG-3L", "RG3L", "expected_relevance"), _method("RG-2L", "RG2L", "expected_relevance")):
        records, failures = score_method(spec, ds, col.candidates, mock, PromptRenderer(), concurrency)
        if failures:
            raise RuntimeError(f"synthetic scoring failed: {failures[0]['error']}")
        ranked, _, _ = rank_records(spec, records, order)
        out.append(evaluate(ranked.values(), ds.qrels).mean)
    return out[0], out[1]
