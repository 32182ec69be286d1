import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from graded_rank.core import Qrels, RankedEntry, RankedList
from graded_rank.evaluation import (
    DegenerateTestError,
    ExportError,
    MetricReport,
    compare,
    evaluate,
    export_marginals,
    export_scatter,
    ndcg_at_k,
    paired_t_test,
    regularized_incomplete_beta,
    student_t_two_sided_p,
)

from .oracles import ndcg_oracle


def ranked(qid, docs, scores=None):
    scores = scores or [float(len(docs) - i) for i in range(len(docs))]
    return RankedList(qid, tuple(RankedEntry(d, s, i + 1) for i, (d, s) in enumerate(zip(docs, scores))))


def test_ndcg_examples():
    q = Qrels({("q", "d1"): 1, ("q", "d2"): 0})
    assert ndcg_at_k(ranked("q", ["d1", "d2"]), q) == 1.0
    assert ndcg_at_k(ranked("q", ["d2", "d1"]), q) == pytest.approx(1 / math.log2(3), abs=1e-12)


def test_ndcg_ideal_uses_all_judged_docs():
    q = Qrels({("q", "a"): 1, ("q", "b"): 2})
    # only "a" was retrieved; the ideal still counts "b"
    assert ndcg_at_k(ranked("q", ["a"]), q) == pytest.approx(1 / (2 + 1 / math.log2(3)))


def test_ndcg_no_positive_judgments_is_excluded():
    q = Qrels({("q", "a"): 0, ("r", "a"): 1})
    assert ndcg_at_k(ranked("q", ["a"]), q) is None
    report = evaluate([ranked("q", ["a"]), ranked("r", ["a"])], q)
    assert report.excluded == ["q"]
    assert report.per_query == {"r": 1.0}
    assert report.mean == 1.0
    assert evaluate([ranked("q", ["a"])], q).mean is None


def test_exponential_gain():
    q = Qrels({("q", "a"): 1, ("q", "b"): 3})
    got = ndcg_at_k(ranked("q", ["a", "b"]), q, gain_mode="exponential")
    assert got == pytest.approx((1 + 7 / math.log2(3)) / (7 + 1 / math.log2(3)))
    with pytest.raises(ValueError):
        ndcg_at_k(ranked("q", ["a"]), q, gain_mode="cubic")


@st.composite
def ranking_case(draw):
    n = draw(st.integers(1, 30))
    grades = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    perm = draw(st.permutations(range(n)))
    return [f"d{i}" for i in perm], {f"d{i}": g for i, g in enumerate(grades)}


@given(ranking_case(), st.integers(1, 15), st.sampled_from(["linear", "exponential"]))
def test_ndcg_bounds_and_oracle(case, k, mode):
    order, judged = case
    qrels = Qrels({("q", d): g for d, g in judged.items()})
    got = ndcg_at_k(ranked("q", order), qrels, k, mode)
    want = ndcg_oracle(order, judged, k, mode)
    if want is None:
        assert got is None
        return
    assert 0.0 <= got <= 1.0
    assert got == pytest.approx(want, abs=1e-12)
    ideal = sorted(order, key=lambda d: -judged[d])
    assert ndcg_at_k(ranked("q", ideal), qrels, k, mode) == pytest.approx(1.0, abs=1e-12)


@given(ranking_case(), st.floats(0.1, 10), st.floats(-5, 5))
def test_ndcg_depends_only_on_order(case, a, b):
    order, judged = case
    qrels = Qrels({("q", d): g for d, g in judged.items()})
    base = [float(len(order) - i) for i in range(len(order))]
    transformed = [a * s + b for s in base]
    assert ndcg_at_k(ranked("q", order, base), qrels) == ndcg_at_k(ranked("q", order, transformed), qrels)


def test_report_round_trip(tmp_path):
    report = MetricReport({"q1": 0.5, "q2": 1.0}, 0.75, 10, "linear", ["q3"], "ds", "m")
    report.save(tmp_path / "r.json")
    assert MetricReport.load(tmp_path / "r.json") == report


# --- significance -----------------------------------------------------------


def test_t_test_examples():
    with pytest.raises(DegenerateTestError):
        paired_t_test([1, 2, 3], [1, 2, 3])
    res = paired_t_test([1, -1, 1, -1], [0, 0, 0, 0])
    assert res.t_statistic == 0.0 and res.p_value == 1.0
    with pytest.raises(ValueError):
        paired_t_test([1.0], [0.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [0.0])


@settings(max_examples=200)
@given(st.floats(0.05, 60), st.floats(0.05, 60), st.floats(0.0, 1.0))
def test_incomplete_beta_matches_scipy(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-12)


@given(st.floats(-40, 40), st.integers(1, 500))
def test_t_p_value_matches_scipy(t, df):
    assert student_t_two_sided_p(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), rel=1e-8, abs=1e-14)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=40))
def test_t_test_matches_scipy(pairs):
    a, b = [x for x, _ in pairs], [y for _, y in pairs]
    diffs = np.subtract(a, b)
    if np.ptp(diffs) < 1e-9:
        return
    ours = paired_t_test(a, b)
    ref = stats.ttest_rel(a, b)
    assert ours.t_statistic == pytest.approx(ref.statistic, rel=1e-9, abs=1e-9)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


def _report(per_query, dataset, method):
    return MetricReport(per_query, sum(per_query.values()) / len(per_query), 10, dataset=dataset, method=method)


def test_compare_tables():
    base = {"d1": _report({"a": 0.1, "b": 0.2, "c": 0.3}, "d1", "base"), "d2": _report({"a": 0.5, "b": 0.4}, "d2", "base")}
    better = {"d1": _report({"a": 0.4, "b": 0.6, "c": 0.7}, "d1", "new"), "d2": _report({"a": 0.9, "b": 0.7}, "d2", "new")}
    comp = compare({"base": base, "new": better}, baseline="base")
    assert comp.datasets == ["d1", "d2"]
    assert comp.averages["new"] == pytest.approx((better["d1"].mean + better["d2"].mean) / 2)
    ref = stats.ttest_rel([0.4, 0.6, 0.7, 0.9, 0.7], [0.1, 0.2, 0.3, 0.5, 0.4])
    assert comp.pooled["new"].p_value == pytest.approx(ref.pvalue, rel=1e-9)
    assert comp.significant("new")
    assert comp.over_dataset_means["new"] is not None
    rows = list(csv.reader(comp.to_csv().splitlines()))
    assert rows[0] == ["method", "d1", "d2", "average", "pooled_p", "marker"]
    assert rows[2][0] == "new" and rows[2][-1] == "*"
    assert comp.to_json()["methods"]["new"]["significant_vs_baseline"] is True
    with pytest.raises(KeyError):
        compare({"base": base}, baseline="missing")


def test_compare_degenerate_tests_are_none():
    same = {"d": _report({"a": 0.5, "b": 0.5}, "d", "x")}
    comp = compare({"x": same, "y": same}, baseline="x")
    assert comp.pooled["y"] is None
    assert not comp.significant("y")


# --- exports ----------------------------------------------------------------


def test_export_scatter(tmp_path):
    a = {("q1", "d1"): 0.5, ("q1", "d2"): 0.25, ("q2", "d9"): 1.0}
    b = {("q1", "d2"): -1.0, ("q1", "d1"): 2.0}
    assert export_scatter(a, b, tmp_path / "s.csv") == 2
    assert (tmp_path / "s.csv").read_text() == (
        "query_id,doc_id,score_a,score_b\nq1,d1,0.500000,2.000000\nq1,d2,0.250000,-1.000000\n"
    )
    with pytest.raises(ExportError):
        export_scatter({("q", "a"): 1.0}, {("q", "b"): 1.0}, tmp_path / "x.csv")


def test_export_marginals(tmp_path):
    qrels = Qrels({("q", "hi"): 2})
    probs = {("q", "hi"): [0.1, 0.2, 0.7], ("q", "lo"): [0.8, 0.15, 0.05]}
    assert export_marginals(probs, qrels, tmp_path / "m.csv") == 6
    rows = list(csv.DictReader((tmp_path / "m.csv").open()))
    assert list(rows[0]) == ["ground_truth_grade", "label_index", "p_k"]
    assert [r["ground_truth_grade"] for r in rows] == ["0"] * 3 + ["2"] * 3
    for start in (0, 3):
        assert math.fsum(float(r["p_k"]) for r in rows[start : start + 3]) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ExportError):
        export_marginals({("q", "a"): [0.5, 0.5], ("q", "b"): [1.0, 0.0, 0.0]}, qrels, tmp_path / "bad.csv")
