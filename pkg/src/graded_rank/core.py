"""Domain types shared across the package and the named relevance-label schemes."""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType


class SchemeError(ValueError):
    """Raised when a label scheme violates its invariants."""


class NonFiniteScoreError(ValueError):
    """Raised when a backend produced NaN or infinite log-likelihoods."""


@dataclass(frozen=True)
class Query:
    id: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("query id must be non-empty")


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")

    @property
    def text(self) -> str:
        """Text shown to the model: title and body joined by a space."""
        if self.title:
            return f"{self.title} {self.body}"
        return self.body


@dataclass(frozen=True)
class Candidate:
    doc_id: str
    first_stage_score: float
    first_stage_rank: int

    def __post_init__(self) -> None:
        if self.first_stage_rank < 1:
            raise ValueError(f"first_stage_rank must be >= 1, got {self.first_stage_rank}")


def check_candidates(candidates: Sequence[Candidate]) -> None:
    """Validate a first-stage candidate list (ranks 1..m, scores non-increasing)."""
    ordered = sorted(candidates, key=lambda c: c.first_stage_rank)
    if [c.first_stage_rank for c in ordered] != list(range(1, len(ordered) + 1)):
        raise ValueError("candidate ranks must be a permutation of 1..m")
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.first_stage_score > prev.first_stage_score:
            raise ValueError(
                f"first-stage score increases at rank {cur.first_stage_rank} ({cur.doc_id})"
            )
    if len({c.doc_id for c in candidates}) != len(candidates):
        raise ValueError("duplicate doc_id in candidate list")


class SchemeKind(str, Enum):
    TEXTUAL = "textual"
    RATING_SCALE = "rating_scale"


@dataclass(frozen=True)
class LabelScheme:
    """Ordered relevance labels (ascending relevance) with their assigned values.

    ``peak_index`` is derived when omitted: the index of the largest relevance
    value, ties going to the highest index.
    """

    kind: SchemeKind
    labels: tuple[str, ...]
    relevance_values: tuple[float, ...]
    peak_index: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "relevance_values", tuple(float(v) for v in self.relevance_values))
        labels, values = self.labels, self.relevance_values
        if len(labels) != len(values):
            raise SchemeError(f"{len(labels)} labels but {len(values)} relevance values")
        if len(labels) < 2:
            raise SchemeError("a scheme needs at least two labels")
        if len(set(labels)) != len(labels):
            dupes = sorted({x for x in labels if labels.count(x) > 1})
            raise SchemeError(f"duplicate labels: {dupes}")
        if not all(math.isfinite(v) for v in values):
            raise SchemeError("relevance values must be finite")
        for i in range(1, len(values)):
            if values[i] < values[i - 1]:
                raise SchemeError(f"relevance values decrease at index {i}: {list(values)}")
        top = max(values)
        derived = max(i for i, v in enumerate(values) if v == top)
        if self.peak_index is None:
            object.__setattr__(self, "peak_index", derived)
        elif values[self.peak_index] != top:
            raise SchemeError(f"peak_index {self.peak_index} does not hold the maximum value")
        if self.kind is SchemeKind.RATING_SCALE:
            try:
                ints = [int(x) for x in labels]
            except ValueError:
                raise SchemeError("rating-scale labels must be decimal integers") from None
            if ints != list(range(ints[0], ints[0] + len(ints))):
                raise SchemeError("rating-scale labels must be consecutive integers")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def scale_bounds(self) -> tuple[int, int]:
        if self.kind is not SchemeKind.RATING_SCALE:
            raise SchemeError("scale bounds are only defined for rating-scale schemes")
        return int(self.labels[0]), int(self.labels[-1])

    def with_values(self, values: Sequence[float]) -> LabelScheme:
        """Same labels with different relevance values (peak re-derived)."""
        return LabelScheme(self.kind, self.labels, tuple(values))


PRESET_LABELS: dict[str, tuple[str, ...]] = {
    "RG2L": ("Not Relevant", "Relevant"),
    "RG3L": ("Not Relevant", "Somewhat Relevant", "Highly Relevant"),
    "RG4L": ("Not Relevant", "Somewhat Relevant", "Highly Relevant", "Perfectly Relevant"),
}

YES_NO_LABELS = ("No", "Yes")


def preset_scheme(name: str) -> LabelScheme:
    key = name.replace("-", "").upper()
    if key not in PRESET_LABELS:
        raise SchemeError(f"unknown preset {name!r}; expected one of {sorted(PRESET_LABELS)}")
    labels = PRESET_LABELS[key]
    return LabelScheme(SchemeKind.TEXTUAL, labels, tuple(range(len(labels))))


def rating_scheme(lo: int, hi: int) -> LabelScheme:
    """Integer rating scale lo..hi; each value is its own label and relevance value."""
    if lo < 0:
        raise SchemeError(f"scale start must be >= 0, got {lo}")
    if lo >= hi:
        raise SchemeError(f"degenerate scale {lo}..{hi}")
    points = range(lo, hi + 1)
    return LabelScheme(SchemeKind.RATING_SCALE, tuple(str(p) for p in points), tuple(points))


def custom_scheme(
    labels: Sequence[str],
    values: Sequence[float] | None = None,
    kind: SchemeKind | str = SchemeKind.TEXTUAL,
) -> LabelScheme:
    if values is None:
        values = range(len(labels))
    return LabelScheme(SchemeKind(kind), tuple(labels), tuple(values))


def yes_no_scheme() -> LabelScheme:
    return LabelScheme(SchemeKind.TEXTUAL, YES_NO_LABELS, (0.0, 1.0))


def check_log_likelihoods(values: Sequence[float], n_labels: int | None = None, where: str = "") -> tuple[float, ...]:
    """Reject NaN/inf and length mismatches; returns the values as a tuple of floats."""
    out = tuple(float(v) for v in values)
    if n_labels is not None and len(out) != n_labels:
        raise ValueError(f"{where}: expected {n_labels} log-likelihoods, got {len(out)}")
    for i, v in enumerate(out):
        if not math.isfinite(v):
            raise NonFiniteScoreError(f"{where}: non-finite log-likelihood {v} at label index {i}")
    return out


@dataclass(frozen=True)
class RankedEntry:
    doc_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    query_id: str
    entries: tuple[RankedEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if [e.rank for e in self.entries] != list(range(1, len(self.entries) + 1)):
            raise ValueError(f"{self.query_id}: ranks must be 1..n in order")
        for prev, cur in zip(self.entries, self.entries[1:]):
            if cur.score > prev.score:
                raise ValueError(f"{self.query_id}: score increases at rank {cur.rank}")
        if len({e.doc_id for e in self.entries}) != len(self.entries):
            raise ValueError(f"{self.query_id}: duplicate doc ids")

    @property
    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Qrels(Mapping[tuple[str, str], int]):
    """Graded judgments keyed by (query_id, doc_id). Unjudged pairs have grade 0."""

    judgments: Mapping[tuple[str, str], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[tuple[str, str], int] = {}
        for key, grade in self.judgments.items():
            if isinstance(grade, float) and not grade.is_integer():
                raise ValueError(f"non-integer grade {grade} for {key}")
            grade = int(grade)
            if grade < 0:
                raise ValueError(f"negative grade {grade} for {key}")
            clean[(str(key[0]), str(key[1]))] = grade
        object.__setattr__(self, "judgments", MappingProxyType(clean))
        by_query: dict[str, dict[str, int]] = {}
        for (q, d), g in clean.items():
            by_query.setdefault(q, {})[d] = g
        object.__setattr__(self, "_by_query", by_query)

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, int]]) -> Qrels:
        return cls({(q, d): g for q, d, g in triples})

    def __getitem__(self, key: tuple[str, str]) -> int:
        return self.judgments[key]

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self.judgments)

    def __len__(self) -> int:
        return len(self.judgments)

    def __hash__(self) -> int:
        return hash(tuple(self.judgments.items()))

    def grade(self, query_id: str, doc_id: str) -> int:
        return self.judgments.get((query_id, doc_id), 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return dict(self._by_query.get(query_id, {}))

    def query_ids(self) -> list[str]:
        return list(self._by_query)
