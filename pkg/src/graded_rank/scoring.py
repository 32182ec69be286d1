"""Ranking scores derived from label log-likelihoods, and sorting into ranked lists."""

from __future__ import annotations

import math
import re
from collections.abc import Mapping, Sequence
from enum import Enum
from typing import NamedTuple

from .core import Candidate, LabelScheme, RankedEntry, RankedList, SchemeKind, check_log_likelihoods


class DerivationStrategy(str, Enum):
    EXPECTED_RELEVANCE = "expected_relevance"
    PEAK_RELEVANCE = "peak_relevance"
    GENERATED_LABEL = "generated_label"
    BINARY_YES_NO = "binary_yes_no"
    QUERY_GENERATION = "query_generation"


def softmax_probs(log_likelihoods: Sequence[float]) -> list[float]:
    s = check_log_likelihoods(log_likelihoods, where="softmax")
    if not s:
        raise ValueError("softmax of an empty vector")
    top = max(s)
    weights = [math.exp(v - top) for v in s]
    total = math.fsum(weights)
    return [w / total for w in weights]


def expected_relevance(log_likelihoods: Sequence[float], scheme: LabelScheme) -> float:
    """Probability-weighted mean of the scheme's relevance values."""
    if len(log_likelihoods) != len(scheme.relevance_values):
        raise ValueError(
            f"{len(log_likelihoods)} log-likelihoods for a {len(scheme)}-label scheme"
        )
    probs = softmax_probs(log_likelihoods)
    value = math.fsum(p * y for p, y in zip(probs, scheme.relevance_values))
    # rounding can push the mean a hair outside [min y, max y]
    return min(max(value, scheme.relevance_values[0]), scheme.relevance_values[-1])


def peak_relevance(log_likelihoods: Sequence[float], scheme: LabelScheme) -> float:
    """Raw log-likelihood of the most relevant label (not its softmax share)."""
    if len(log_likelihoods) != len(scheme.relevance_values):
        raise ValueError(
            f"{len(log_likelihoods)} log-likelihoods for a {len(scheme)}-label scheme"
        )
    return float(check_log_likelihoods(log_likelihoods)[scheme.peak_index])


def binary_yes_no(s_no: float, s_yes: float) -> float:
    s_no, s_yes = check_log_likelihoods((s_no, s_yes), where="yes/no")
    # logistic of the margin; the branch keeps exp() from overflowing
    margin = s_yes - s_no
    if margin >= 0:
        return 1.0 / (1.0 + math.exp(-margin))
    z = math.exp(margin)
    return z / (1.0 + z)


class GeneratedScore(NamedTuple):
    score: float
    tie_key: int
    parsed: bool


_INTEGER = re.compile(r"-?\d+")


def parse_generated_label(text: str, scheme: LabelScheme) -> int | None:
    """Index of the first scheme label found in ``text``, or None."""
    if scheme.kind is SchemeKind.RATING_SCALE:
        m = _INTEGER.search(text)
        if m is None:
            return None
        try:
            return scheme.labels.index(str(int(m.group())))
        except ValueError:
            return None
    lowered = text.lower()
    best: tuple[int, int, int] | None = None
    for idx, label in enumerate(scheme.labels):
        pos = lowered.find(label.lower())
        if pos < 0:
            continue
        # earliest start wins; at equal start the longer label wins
        key = (pos, -len(label), idx)
        if best is None or key < best:
            best = key
    return None if best is None else best[2]


def generated_label_score(text: str, scheme: LabelScheme, fallback_rank: int) -> GeneratedScore:
    idx = parse_generated_label(text, scheme)
    if idx is None:
        return GeneratedScore(scheme.relevance_values[0], fallback_rank, False)
    return GeneratedScore(scheme.relevance_values[idx], fallback_rank, True)


def argmax_label(log_likelihoods: Sequence[float], scheme: LabelScheme) -> str:
    """Label a greedy decoder restricted to the scheme would emit (first index on ties)."""
    s = check_log_likelihoods(log_likelihoods, len(scheme))
    return scheme.labels[max(range(len(s)), key=lambda i: (s[i], -i))]


def query_generation_score(token_log_likelihoods: Sequence[float], normalization: str = "mean") -> float:
    """Query likelihood given the document; mean per token by default, ``"sum"`` for the total."""
    values = check_log_likelihoods(token_log_likelihoods, where="query generation")
    if not values:
        raise ValueError("query generation needs at least one token log-likelihood")
    if normalization == "mean":
        return math.fsum(values) / len(values)
    if normalization == "sum":
        return math.fsum(values)
    raise ValueError(f"unknown normalization {normalization!r}")


def rank(query_id: str, candidates: Sequence[Candidate], scores: Mapping[str, float] | Sequence[float]) -> RankedList:
    """Sort candidates by descending score, breaking ties by first-stage rank."""
    if isinstance(scores, Mapping):
        values = [scores[c.doc_id] for c in candidates]
    else:
        values = list(scores)
    if len(values) != len(candidates):
        raise ValueError(f"{len(values)} scores for {len(candidates)} candidates")
    for c, v in zip(candidates, values):
        if math.isnan(v):
            raise ValueError(f"NaN score for {query_id}/{c.doc_id}")
    order = sorted(range(len(candidates)), key=lambda i: (-values[i], candidates[i].first_stage_rank))
    entries = [
        RankedEntry(candidates[i].doc_id, float(values[i]), r)
        for r, i in enumerate(order, start=1)
    ]
    return RankedList(query_id, tuple(entries))
