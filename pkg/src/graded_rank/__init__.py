"""Pointwise LLM reranking with fine-grained relevance labels."""

from .core import (
    Candidate,
    Document,
    LabelScheme,
    Qrels,
    Query,
    RankedEntry,
    RankedList,
    SchemeKind,
    custom_scheme,
    preset_scheme,
    rating_scheme,
)
from .scoring import (
    DerivationStrategy,
    binary_yes_no,
    expected_relevance,
    peak_relevance,
    rank,
    softmax_probs,
)

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "DerivationStrategy",
    "Document",
    "LabelScheme",
    "Qrels",
    "Query",
    "RankedEntry",
    "RankedList",
    "SchemeKind",
    "binary_yes_no",
    "custom_scheme",
    "expected_relevance",
    "peak_relevance",
    "preset_scheme",
    "rank",
    "rating_scheme",
    "softmax_probs",
]
