"""First-stage BM25 retrieval and the file formats around it (BEIR corpus/queries/qrels, TREC runs)."""

from __future__ import annotations

import json
import math
import re
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .core import Candidate, Document, Qrels, Query, RankedEntry, RankedList

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

# small English list; off unless asked for
STOPWORDS = frozenset(
    """a an and are as at be but by for from has have he her his i if in into is it its
    no not of on or our she so such that the their then there these they this to was we
    were what when where which who will with you your""".split()
)

_NON_ALNUM = re.compile(r"[\W_]+")


class FormatError(ValueError):
    """A malformed line in an input file; the message names file and line."""


def tokenize(text: str, stopwords: frozenset[str] | None = None) -> list[str]:
    """Lowercase and split on any run of non-alphanumeric characters."""
    tokens = [t for t in _NON_ALNUM.split(text.lower()) if t]
    if stopwords:
        tokens = [t for t in tokens if t not in stopwords]
    return tokens


@dataclass(frozen=True)
class InvertedIndex:
    postings: Mapping[str, tuple[tuple[int, int], ...]]
    doc_lengths: tuple[int, ...]
    avg_doc_length: float
    doc_count: int
    doc_ids: tuple[str, ...]
    use_stopwords: bool = False

    @property
    def stopwords(self) -> frozenset[str] | None:
        return STOPWORDS if self.use_stopwords else None

    def to_json(self) -> dict:
        return {
            "doc_ids": list(self.doc_ids),
            "doc_lengths": list(self.doc_lengths),
            "use_stopwords": self.use_stopwords,
            "postings": {t: [list(p) for p in ps] for t, ps in self.postings.items()},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> InvertedIndex:
        lengths = tuple(data["doc_lengths"])
        return cls(
            postings={t: tuple((int(o), int(tf)) for o, tf in ps) for t, ps in data["postings"].items()},
            doc_lengths=lengths,
            avg_doc_length=sum(lengths) / len(lengths),
            doc_count=len(lengths),
            doc_ids=tuple(data["doc_ids"]),
            use_stopwords=bool(data.get("use_stopwords", False)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> InvertedIndex:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_index(corpus: Sequence[Document] | Mapping[str, str], use_stopwords: bool = False) -> InvertedIndex:
    """Index documents in the given order; accepts Documents or a {doc_id: text} mapping."""
    if isinstance(corpus, Mapping):
        docs = [(doc_id, text) for doc_id, text in corpus.items()]
    else:
        docs = [(d.id, d.text) for d in corpus]
    if not docs:
        raise ValueError("cannot index an empty corpus")
    seen: set[str] = set()
    postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
    lengths: list[int] = []
    stop = STOPWORDS if use_stopwords else None
    for ordinal, (doc_id, text) in enumerate(docs):
        if doc_id in seen:
            raise ValueError(f"duplicate doc id {doc_id!r}")
        seen.add(doc_id)
        tokens = tokenize(text, stop)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings[term].append((ordinal, tf))
    return InvertedIndex(
        postings={t: tuple(ps) for t, ps in postings.items()},
        doc_lengths=tuple(lengths),
        avg_doc_length=sum(lengths) / len(lengths),
        doc_count=len(lengths),
        doc_ids=tuple(d for d, _ in docs),
        use_stopwords=use_stopwords,
    )


def idf(doc_count: int, df: int) -> float:
    """Lucene's non-negative BM25 IDF."""
    return math.log(1.0 + (doc_count - df + 0.5) / (df + 0.5))


def bm25_search(
    index: InvertedIndex,
    query: str,
    k: int = 100,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> list[Candidate]:
    """Top-``k`` documents sharing at least one term with ``query``.

    Repeated query terms count once per occurrence, as in Lucene's bag-of-words query.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores: dict[int, float] = defaultdict(float)
    avgdl = index.avg_doc_length
    for term, qtf in Counter(tokenize(query, index.stopwords)).items():
        plist = index.postings.get(term)
        if not plist:
            continue
        w = idf(index.doc_count, len(plist))
        for ordinal, tf in plist:
            dl = index.doc_lengths[ordinal]
            norm = k1 * (1.0 - b + b * dl / avgdl) if avgdl > 0 else k1
            scores[ordinal] += qtf * w * tf * (k1 + 1.0) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [
        Candidate(index.doc_ids[o], s, r) for r, (o, s) in enumerate(ranked, start=1)
    ]


# --- file formats -----------------------------------------------------------


@dataclass(frozen=True)
class RunEntry:
    query_id: str
    doc_id: str
    rank: int
    score: float
    tag: str


def read_run(path: str | Path) -> list[RunEntry]:
    """Parse a TREC run file (``qid Q0 docid rank score tag``)."""
    entries: list[RunEntry] = []
    last_rank: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 columns, got {len(cols)}")
            qid, _, doc_id, rank_s, score_s, tag = cols
            try:
                rank, score = int(rank_s), float(score_s)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: bad rank or score {rank_s!r} {score_s!r}") from None
            expected = last_rank.get(qid, 0) + 1
            if rank != expected:
                raise FormatError(f"{path}:{lineno}: rank {rank} for {qid}, expected {expected}")
            last_rank[qid] = rank
            entries.append(RunEntry(qid, doc_id, rank, score, tag))
    return entries


def write_run(path: str | Path, entries: Iterable[RunEntry]) -> None:
    lines = [f"{e.query_id} Q0 {e.doc_id} {e.rank} {e.score:.6f} {e.tag}\n" for e in entries]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(lines), encoding="utf-8")


def run_entries(ranked: Iterable[RankedList], tag: str) -> list[RunEntry]:
    return [
        RunEntry(rl.query_id, e.doc_id, e.rank, e.score, tag) for rl in ranked for e in rl.entries
    ]


def candidates_from_run(entries: Sequence[RunEntry], k: int | None = None) -> dict[str, list[Candidate]]:
    out: dict[str, list[Candidate]] = {}
    for e in entries:
        bucket = out.setdefault(e.query_id, [])
        if k is None or len(bucket) < k:
            bucket.append(Candidate(e.doc_id, e.score, e.rank))
    return out


def ranked_lists_from_run(entries: Sequence[RunEntry]) -> dict[str, RankedList]:
    grouped: dict[str, list[RankedEntry]] = {}
    for e in entries:
        grouped.setdefault(e.query_id, []).append(RankedEntry(e.doc_id, e.score, e.rank))
    return {q: RankedList(q, tuple(es)) for q, es in grouped.items()}


QRELS_HEADER = "query-id\tcorpus-id\tscore"


def read_qrels(path: str | Path) -> Qrels:
    """Read BEIR-style qrels TSV; a leading header row is tolerated."""
    triples: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if lineno == 1 and cols[:1] == ["query-id"]:
                continue
            if len(cols) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated columns, got {len(cols)}")
            try:
                grade = int(cols[2])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: grade {cols[2]!r} is not an integer") from None
            if grade < 0:
                raise FormatError(f"{path}:{lineno}: negative grade {grade}")
            triples[(cols[0], cols[1])] = grade
    return Qrels(triples)


def write_qrels(path: str | Path, qrels: Qrels, header: bool = True) -> None:
    lines = [QRELS_HEADER + "\n"] if header else []
    lines += [f"{q}\t{d}\t{g}\n" for (q, d), g in qrels.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_queries(path: str | Path) -> list[Query]:
    """Queries TSV: ``id<TAB>text`` per line."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid, sep, text = line.partition("\t")
            if not sep or not qid:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>text'")
            if qid in seen:
                raise FormatError(f"{path}:{lineno}: duplicate query id {qid!r}")
            seen.add(qid)
            queries.append(Query(qid, text))
    return queries


def read_corpus(path: str | Path) -> list[Document]:
    """BEIR corpus JSON-lines with ``_id``, ``title`` and ``text`` fields."""
    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                doc_id = str(row["_id"])
            except (ValueError, KeyError, TypeError):
                raise FormatError(f"{path}:{lineno}: not a corpus record with an '_id'") from None
            if doc_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate doc id {doc_id!r}")
            seen.add(doc_id)
            docs.append(Document(doc_id, row.get("title") or "", row.get("text") or ""))
    return docs
