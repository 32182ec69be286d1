import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from graded_rank.core import Candidate, custom_scheme, preset_scheme, rating_scheme
from graded_rank.scoring import (
    argmax_label,
    binary_yes_no,
    expected_relevance,
    generated_label_score,
    parse_generated_label,
    peak_relevance,
    query_generation_score,
    rank,
    softmax_probs,
)

from .oracles import er_oracle

RG3L = preset_scheme("RG3L")
finite = st.floats(min_value=-200.0, max_value=50.0, allow_nan=False)


def log_likelihoods(n):
    return st.lists(finite, min_size=n, max_size=n)


@st.composite
def scored_scheme(draw):
    n = draw(st.integers(2, 8))
    s = draw(log_likelihoods(n))
    y = sorted(draw(st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n)))
    return s, custom_scheme([f"L{i}" for i in range(n)], y)


# --- examples ---------------------------------------------------------------


def test_softmax_examples():
    assert softmax_probs([0, 0, 0]) == pytest.approx([1 / 3] * 3, abs=1e-12)
    assert softmax_probs([0, math.log(2)]) == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    assert softmax_probs([1000, 1000 + math.log(3)]) == pytest.approx([0.25, 0.75], abs=1e-12)


def test_expected_relevance_examples():
    assert expected_relevance([0, 0, 0], RG3L) == pytest.approx(1.0, abs=1e-12)
    assert expected_relevance([0, math.log(2)], preset_scheme("RG2L")) == pytest.approx(2 / 3, abs=1e-12)
    assert abs(expected_relevance([-50, 0, -50], RG3L) - 1.0) <= 1e-9


def test_peak_relevance_examples():
    assert peak_relevance([-3, -2, -1], RG3L) == -1.0
    assert peak_relevance([-1, -1, -1], RG3L) == -1.0
    assert peak_relevance([-0.1, -5, -9], RG3L) == -9.0


def test_binary_yes_no_examples():
    assert binary_yes_no(-1.0, -1.0) == 0.5
    assert binary_yes_no(0.0, math.log(9)) == pytest.approx(0.9, abs=1e-12)
    assert binary_yes_no(0.0, -math.log(9)) == pytest.approx(0.1, abs=1e-12)
    assert binary_yes_no(0.0, 1e4) == 1.0
    assert binary_yes_no(1e4, 0.0) == 0.0


def test_generated_label_examples():
    assert generated_label_score("Highly Relevant", RG3L, 1) == (2.0, 1, True)
    assert generated_label_score(" 3", rating_scheme(0, 4), 1).score == 3.0
    fallback = generated_label_score("I think it is related", RG3L, 4)
    assert fallback.score == 0.0 and not fallback.parsed and fallback.tie_key == 4


def test_generated_label_parsing_prefers_earliest_then_longest():
    # "Relevant" is a substring of the other labels; the longer match at the same start wins
    two = preset_scheme("RG2L")
    assert parse_generated_label("not relevant at all", two) == 0
    assert parse_generated_label("Relevant, I'd say", two) == 1
    assert parse_generated_label("somewhat relevant", RG3L) == 1
    assert parse_generated_label("7", rating_scheme(0, 4)) is None
    assert parse_generated_label("rating: 2/4", rating_scheme(0, 4)) == 2


def test_argmax_label_first_index_on_ties():
    assert argmax_label([-1, -1, -2], RG3L) == "Not Relevant"
    assert argmax_label([-3, -1, -2], RG3L) == "Somewhat Relevant"


def test_query_generation_examples():
    assert query_generation_score([-1, -1, -1, -1]) == -1.0
    assert query_generation_score([-2, 0]) == -1.0
    assert query_generation_score([-1, -1]) == -1.0
    assert query_generation_score([-0.9, -1.3, -1.4]) == pytest.approx(-1.2, abs=1e-12)
    assert query_generation_score([-0.9, -1.3, -1.4], "sum") == pytest.approx(-3.6, abs=1e-12)
    with pytest.raises(ValueError):
        query_generation_score([])
    with pytest.raises(ValueError):
        query_generation_score([-1.0], "median")


def test_rank_examples():
    cands = [Candidate("a", 3.0, 1), Candidate("b", 2.0, 2), Candidate("c", 1.0, 3)]
    assert rank("q", cands, [0.2, 0.9, 0.5]).doc_ids == ["b", "c", "a"]
    assert rank("q", cands, [1.0, 1.0, 1.0]).doc_ids == ["a", "b", "c"]
    assert rank("q", cands, {"a": 0.0, "b": 1.0, "c": 1.0}).doc_ids == ["b", "c", "a"]
    with pytest.raises(ValueError):
        rank("q", cands, [1.0, math.nan, 0.0])
    with pytest.raises(ValueError):
        rank("q", cands, [1.0])


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        expected_relevance([0, 0], RG3L)
    with pytest.raises(ValueError):
        peak_relevance([0, 0], RG3L)


def test_degenerate_values_weight_top_two_labels():
    # y = [0, 2, 2]: ER is twice the probability mass on the top two labels
    scheme = custom_scheme(["N", "S", "H"], [0, 2, 2])
    s = [-0.7, -1.9, -0.4]
    p = softmax_probs(s)
    assert expected_relevance(s, scheme) == pytest.approx(2 * (p[1] + p[2]), abs=1e-12)
    assert expected_relevance(s, scheme) == pytest.approx(er_oracle(s, [0, 2, 2]), abs=1e-12)


# --- properties -------------------------------------------------------------


@given(scored_scheme(), st.floats(-1e3, 1e3, allow_nan=False))
def test_er_shift_invariance(case, c):
    s, scheme = case
    assert abs(expected_relevance([v + c for v in s], scheme) - expected_relevance(s, scheme)) <= 1e-9


@given(log_likelihoods(3), st.floats(0.01, 100), st.floats(-100, 100))
def test_er_affine_response(s, a, b):
    base = [0.0, 1.0, 2.0]
    mapped = custom_scheme(["a", "b", "c"], [a * v + b for v in base])
    got = expected_relevance(s, mapped)
    want = a * expected_relevance(s, custom_scheme(["a", "b", "c"], base)) + b
    assert got == pytest.approx(want, rel=1e-12, abs=1e-9)


@given(st.lists(log_likelihoods(3), min_size=2, max_size=12), st.floats(0.1, 50), st.floats(-50, 50))
def test_ranking_invariant_under_positive_affine_values(rows, a, b):
    base = RG3L
    mapped = RG3L.with_values([a * v + b for v in base.relevance_values])
    cands = [Candidate(f"d{i}", float(-i), i + 1) for i in range(len(rows))]
    by_base = rank("q", cands, [expected_relevance(s, base) for s in rows]).doc_ids
    by_mapped = rank("q", cands, [expected_relevance(s, mapped) for s in rows]).doc_ids
    # exact float ties can break differently after scaling; compare on well-separated rows only
    ers = sorted(expected_relevance(s, base) for s in rows)
    assume(all(hi - lo > 1e-9 for lo, hi in zip(ers, ers[1:])))
    assert by_base == by_mapped


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
def test_er_respects_stochastic_dominance(u, v):
    # build p' then move mass upward to get p, which dominates p'
    assume(sum(u) > 1e-6)
    p_low = [x / sum(u) for x in u]
    shift = [min(v[0], 1.0) * p_low[0], min(v[1], 1.0) * p_low[1]]
    p_high = [p_low[0] - shift[0], p_low[1] + shift[0] - shift[1], p_low[2] + shift[1]]
    assume(min(p_low) > 1e-12 and min(p_high) > 1e-12)
    s_low = [math.log(x) for x in p_low]
    s_high = [math.log(x) for x in p_high]
    assert expected_relevance(s_high, RG3L) >= expected_relevance(s_low, RG3L) - 1e-12


@given(finite, finite)
def test_yes_no_symmetry(a, b):
    assert abs(binary_yes_no(a, b) + binary_yes_no(b, a) - 1.0) <= 1e-12


@given(scored_scheme())
def test_er_within_value_range(case):
    s, scheme = case
    er = expected_relevance(s, scheme)
    assert scheme.relevance_values[0] <= er <= scheme.relevance_values[-1]


@given(log_likelihoods(5))
def test_softmax_sums_to_one(s):
    assert math.fsum(softmax_probs(s)) == pytest.approx(1.0, abs=1e-12)
