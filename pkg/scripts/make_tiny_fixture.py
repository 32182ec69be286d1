"""Regenerate the table-mock fixture for tests/fixtures/tiny.

Log-likelihoods follow a simple deterministic rule: each label's value falls
off with its distance from the pair's ground-truth grade (rescaled to the
scheme length; two-label schemes lump grades 1 and 2 together), plus a
per-pair jitter taken from a hash. Run again whenever
the prompt templates change, since the fixture is keyed by prompt hash.

    python scripts/make_tiny_fixture.py
"""

from __future__ import annotations

import hashlib
from pathlib import Path

from graded_rank.backend import write_table_fixture
from graded_rank.core import preset_scheme, rating_scheme
from graded_rank.prompt import DEFAULT_RENDERER, TemplateKind
from graded_rank.retrieval import read_corpus, read_qrels, read_queries, tokenize

HERE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "tiny"

SCHEMES = [
    (TemplateKind.RG_TEXTUAL, preset_scheme("RG2L")),
    (TemplateKind.RG_TEXTUAL, preset_scheme("RG3L")),
    (TemplateKind.RG_TEXTUAL, preset_scheme("RG4L")),
    (TemplateKind.RG_SCALE, rating_scheme(0, 2)),
    (TemplateKind.RG_SCALE, rating_scheme(0, 4)),
    (TemplateKind.RG_SCALE, rating_scheme(1, 4)),
    (TemplateKind.RG_YN, None),
]


def jitter(*parts: str) -> float:
    h = hashlib.sha256("\x00".join(parts).encode()).digest()
    return int.from_bytes(h[:4], "little") / 2**32  # [0, 1)


def main() -> None:
    corpus = read_corpus(HERE / "corpus.jsonl")
    queries = read_queries(HERE / "queries.tsv")
    qrels = read_qrels(HERE / "qrels.tsv")
    table: dict[tuple[str, str], float | list[float]] = {}
    for q in queries:
        for d in corpus:
            grade = qrels.grade(q.id, d.id)
            for kind, scheme in SCHEMES:
                prompt = DEFAULT_RENDERER.render(kind, q, d, scheme)
                n = len(prompt.continuations)
                # binary schemes cannot separate grades 1 and 2
                target = min(grade, 1) if n == 2 else grade / 2 * (n - 1)
                for k, cont in enumerate(prompt.continuations):
                    value = -0.3 - 1.5 * abs(k - target) - 0.8 * jitter(q.id, d.id, cont)
                    table[(prompt.text, cont)] = round(value, 4)
            prompt = DEFAULT_RENDERER.render(TemplateKind.QG, q, d)
            tokens = tokenize(q.text)
            table[(prompt.text, prompt.continuations[0])] = [
                round(-2.5 + 0.6 * grade - 0.5 * jitter(q.id, d.id, t, str(i)), 4) for i, t in enumerate(tokens)
            ]
    write_table_fixture(HERE / "mock_table.json", table)
    print(f"wrote {len(table)} entries to {HERE / 'mock_table.json'}")


if __name__ == "__main__":
    main()
