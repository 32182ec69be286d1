"""NDCG@k, paired t-tests, method comparison tables and CSV exports."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .core import Qrels, RankedList

GAIN_MODES = ("linear", "exponential")


def _gain(grade: int, gain_mode: str) -> float:
    if gain_mode == "linear":
        return float(grade)
    if gain_mode == "exponential":
        return 2.0**grade - 1.0
    raise ValueError(f"unknown gain mode {gain_mode!r}")


def dcg(grades: Sequence[int], k: int, gain_mode: str = "linear") -> float:
    return math.fsum(_gain(g, gain_mode) / math.log2(r + 1) for r, g in enumerate(grades[:k], start=1))


def ndcg_at_k(ranked: RankedList, qrels: Qrels, k: int = 10, gain_mode: str = "linear") -> float | None:
    """NDCG@k of one ranked list; None when the query has no positively judged document.

    The ideal ordering is built from every judged document of the query, not
    only the retrieved ones.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    judged = qrels.for_query(ranked.query_id)
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)
    if not ideal:
        return None
    idcg = dcg(ideal, k, gain_mode)
    actual = dcg([judged.get(d, 0) for d in ranked.doc_ids], k, gain_mode)
    return min(actual / idcg, 1.0)


@dataclass
class MetricReport:
    per_query: dict[str, float]
    mean: float | None
    k: int
    gain_mode: str = "linear"
    excluded: list[str] = field(default_factory=list)
    dataset: str = ""
    method: str = ""

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "mean": self.mean,
            "k": self.k,
            "gain_mode": self.gain_mode,
            "evaluated": len(self.per_query),
            "excluded": self.excluded,
            "per_query": self.per_query,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> MetricReport:
        return cls(
            per_query=dict(data["per_query"]),
            mean=data["mean"],
            k=data["k"],
            gain_mode=data.get("gain_mode", "linear"),
            excluded=list(data.get("excluded", [])),
            dataset=data.get("dataset", ""),
            method=data.get("method", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> MetricReport:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def evaluate(
    ranked_lists: Iterable[RankedList],
    qrels: Qrels,
    k: int = 10,
    gain_mode: str = "linear",
    dataset: str = "",
    method: str = "",
) -> MetricReport:
    """Per-query NDCG@k and their mean; queries without positive judgments are excluded."""
    per_query: dict[str, float] = {}
    excluded: list[str] = []
    for rl in sorted(ranked_lists, key=lambda r: r.query_id):
        value = ndcg_at_k(rl, qrels, k, gain_mode)
        if value is None:
            excluded.append(rl.query_id)
        else:
            per_query[rl.query_id] = value
    mean = math.fsum(per_query.values()) / len(per_query) if per_query else None
    return MetricReport(per_query, mean, k, gain_mode, excluded, dataset, method)


# --- significance -----------------------------------------------------------


class DegenerateTestError(ValueError):
    """The paired differences have zero variance, so t is undefined."""


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    df: int
    paired_n: int
    mean_difference: float = 0.0

    def to_json(self) -> dict:
        return {
            "t": self.t_statistic,
            "p": self.p_value,
            "df": self.df,
            "n": self.paired_n,
            "mean_difference": self.mean_difference,
        }


def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    # the continued fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, regularized_incomplete_beta(df / 2.0, 0.5, x)))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> SignificanceResult:
    """Two-sided paired t-test on a - b."""
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("a paired t-test needs at least two pairs")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    mean = math.fsum(diffs) / n
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0 or all(d == diffs[0] for d in diffs):
        raise DegenerateTestError("all paired differences are identical; t is undefined")
    t = mean / math.sqrt(var / n)
    return SignificanceResult(t, student_t_two_sided_p(t, n - 1), n - 1, n, mean)


def _safe_test(a: Sequence[float], b: Sequence[float]) -> SignificanceResult | None:
    try:
        return paired_t_test(a, b)
    except ValueError:
        return None


# --- method comparison ------------------------------------------------------


@dataclass
class Comparison:
    """NDCG@k per method and dataset, with significance against a baseline method."""

    datasets: list[str]
    methods: list[str]
    means: dict[str, dict[str, float | None]]
    averages: dict[str, float | None]
    baseline: str | None = None
    pooled: dict[str, SignificanceResult | None] = field(default_factory=dict)
    per_dataset: dict[str, dict[str, SignificanceResult | None]] = field(default_factory=dict)
    over_dataset_means: dict[str, SignificanceResult | None] = field(default_factory=dict)
    alpha: float = 0.05

    def significant(self, method: str) -> bool:
        res = self.pooled.get(method)
        return res is not None and res.p_value < self.alpha and res.mean_difference > 0

    def to_json(self) -> dict:
        def sig(r):
            return None if r is None else r.to_json()

        return {
            "datasets": self.datasets,
            "baseline": self.baseline,
            "alpha": self.alpha,
            "methods": {
                m: {
                    "per_dataset": self.means[m],
                    "average": self.averages[m],
                    "significant_vs_baseline": self.significant(m),
                    "pooled_test": sig(self.pooled.get(m)),
                    "per_dataset_tests": {d: sig(r) for d, r in self.per_dataset.get(m, {}).items()},
                    "dataset_means_test": sig(self.over_dataset_means.get(m)),
                }
                for m in self.methods
            },
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", *self.datasets, "average", "pooled_p", "marker"])
        for m in self.methods:
            pooled = self.pooled.get(m)
            writer.writerow(
                [
                    m,
                    *[_fmt(self.means[m].get(d)) for d in self.datasets],
                    _fmt(self.averages[m]),
                    "" if pooled is None else _fmt(pooled.p_value),
                    "*" if self.significant(m) else "",
                ]
            )
        return buf.getvalue()


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


def compare(
    reports: Mapping[str, Mapping[str, MetricReport]],
    baseline: str | None = None,
    alpha: float = 0.05,
) -> Comparison:
    """Build a comparison from ``reports[method][dataset]``.

    The average is the unweighted mean of per-dataset means. Significance is
    reported three ways: per-query values pooled across datasets, per dataset,
    and over the per-dataset means.
    """
    methods = list(reports)
    datasets = list(dict.fromkeys(d for m in methods for d in reports[m]))
    means = {m: {d: reports[m][d].mean if d in reports[m] else None for d in datasets} for m in methods}
    averages: dict[str, float | None] = {}
    for m in methods:
        vals = [v for v in means[m].values() if v is not None]
        averages[m] = math.fsum(vals) / len(vals) if len(vals) == len(datasets) and vals else None
    comp = Comparison(datasets, methods, means, averages, baseline, alpha=alpha)
    if baseline is None:
        return comp
    if baseline not in reports:
        raise KeyError(f"baseline method {baseline!r} not among {methods}")
    base = reports[baseline]
    for m in methods:
        if m == baseline:
            continue
        pooled_a, pooled_b = [], []
        comp.per_dataset[m] = {}
        for d in datasets:
            if d not in reports[m] or d not in base:
                comp.per_dataset[m][d] = None
                continue
            qa, qb = reports[m][d].per_query, base[d].per_query
            common = sorted(set(qa) & set(qb))
            a = [qa[q] for q in common]
            b = [qb[q] for q in common]
            pooled_a += a
            pooled_b += b
            comp.per_dataset[m][d] = _safe_test(a, b)
        comp.pooled[m] = _safe_test(pooled_a, pooled_b)
        paired = [(means[m][d], means[baseline][d]) for d in datasets]
        paired = [(x, y) for x, y in paired if x is not None and y is not None]
        comp.over_dataset_means[m] = _safe_test([x for x, _ in paired], [y for _, y in paired])
    return comp


# --- exports ----------------------------------------------------------------


class ExportError(ValueError):
    pass


def export_scatter(
    scores_a: Mapping[tuple[str, str], float],
    scores_b: Mapping[tuple[str, str], float],
    path: str | Path,
) -> int:
    """Write paired scores of two methods for shared (query, doc) pairs; returns the row count."""
    common = sorted(set(scores_a) & set(scores_b))
    if not common:
        raise ExportError("the two score maps share no (query, doc) pair")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_id", "doc_id", "score_a", "score_b"])
    for q, d in common:
        writer.writerow([q, d, f"{scores_a[(q, d)]:.6f}", f"{scores_b[(q, d)]:.6f}"])
    _write_text(path, buf.getvalue())
    return len(common)


def export_marginals(
    prob_vectors: Mapping[tuple[str, str], Sequence[float]],
    qrels: Qrels,
    path: str | Path,
) -> int:
    """Long-format label probabilities, one row per (pair, label), grouped by ground truth grade."""
    if not prob_vectors:
        raise ExportError("no probability vectors to export")
    sizes = {len(v) for v in prob_vectors.values()}
    if len(sizes) != 1:
        raise ExportError(f"probability vectors come from different schemes (sizes {sorted(sizes)})")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ground_truth_grade", "label_index", "p_k"])
    rows = 0
    for grade, q, d in sorted((qrels.grade(q, d), q, d) for q, d in prob_vectors):
        for idx, p in enumerate(prob_vectors[(q, d)]):
            writer.writerow([grade, idx, f"{p:.6f}"])
            rows += 1
    _write_text(path, buf.getvalue())
    return rows


def _write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
