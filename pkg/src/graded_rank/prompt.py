"""Prompt templates for query generation and relevance generation rankers."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import Document, LabelScheme, Query, SchemeKind, YES_NO_LABELS, yes_no_scheme


class PromptError(ValueError):
    pass


class TemplateKind(str, Enum):
    QG = "QG"
    RG_YN = "RG_YN"
    RG_TEXTUAL = "RG_TEXTUAL"
    RG_SCALE = "RG_SCALE"


_PAIR_BLOCK = "Query: {query}\nDocument: {document}\nOutput:"

DEFAULT_TEMPLATES: dict[TemplateKind, str] = {
    TemplateKind.QG: (
        "I will check whether what you said could answer my question.\n\n"
        "You said: {document}\n"
        "I googled:"
    ),
    TemplateKind.RG_YN: (
        "For the following query and document, judge whether they are relevant. "
        'Output "Yes" or "No".\n\n' + _PAIR_BLOCK
    ),
    TemplateKind.RG_TEXTUAL: (
        "For the following query and document, judge whether they are {labels}.\n\n" + _PAIR_BLOCK
    ),
    TemplateKind.RG_SCALE: (
        "From a scale of {lo} to {k}, judge the relevance between the query and the document.\n\n"
        + _PAIR_BLOCK
    ),
}

_PLACEHOLDER = re.compile(r"\{(query|document|labels|lo|k)\}")
_LAST_WORD = re.compile(r"\s+\S*\Z")


@dataclass(frozen=True)
class Exemplar:
    query: str
    document: str
    label: str


@dataclass(frozen=True)
class PromptPrefix:
    """Optional instruction preamble and few-shot exemplars placed before the prompt."""

    preamble: str | None = None
    exemplars: tuple[Exemplar, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self,
            "exemplars",
            tuple(e if isinstance(e, Exemplar) else Exemplar(*e) for e in self.exemplars),
        )


NO_PREFIX = PromptPrefix()


@dataclass(frozen=True)
class TruncationPolicy:
    """Cap document text at ``max_chars``, cutting back to the last whitespace."""

    max_chars: int = 4000

    def __post_init__(self) -> None:
        if self.max_chars <= 0:
            raise PromptError(f"truncation limit must be positive, got {self.max_chars}")

    def apply(self, text: str) -> str:
        if len(text) <= self.max_chars:
            return text
        cut = text[: self.max_chars]
        # a boundary is only useful if the next character starts a new word
        if text[self.max_chars].isspace():
            return cut.rstrip()
        m = _LAST_WORD.search(cut)
        if m is None or m.start() == 0:
            return cut
        return cut[: m.start()]


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    continuations: tuple[str, ...]


@dataclass(frozen=True)
class PromptRenderer:
    """Holds the rendering options shared by every prompt of an experiment.

    ``continuation_prefix`` is prepended to every scored continuation and to
    exemplar answers; the default single space matches how most tokenizers
    attach a word following ``Output:``.
    """

    templates: dict[TemplateKind, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    truncation: TruncationPolicy = TruncationPolicy()
    continuation_prefix: str = " "

    def render(
        self,
        kind: TemplateKind | str,
        query: Query,
        doc: Document,
        scheme: LabelScheme | None = None,
        prefix: PromptPrefix = NO_PREFIX,
    ) -> RenderedPrompt:
        kind = TemplateKind(kind)
        if not query.text.strip():
            raise PromptError(f"query {query.id!r} has empty text")
        scheme = _check_scheme(kind, scheme)
        fields = _scheme_fields(kind, scheme)

        if kind is TemplateKind.QG:
            continuations = (self.continuation_prefix + query.text,)
        else:
            continuations = tuple(self.continuation_prefix + label for label in scheme.labels)

        parts = []
        if prefix.preamble:
            parts.append(prefix.preamble)
        for ex in prefix.exemplars:
            if kind is TemplateKind.QG:
                answer = ex.query
            else:
                if ex.label not in scheme.labels:
                    raise PromptError(f"exemplar label {ex.label!r} not in scheme {list(scheme.labels)}")
                answer = ex.label
            body = self._fill(kind, ex.query, self.truncation.apply(ex.document), fields)
            parts.append(body + self.continuation_prefix + answer)
        parts.append(self._fill(kind, query.text, self.truncation.apply(doc.text), fields))
        return RenderedPrompt("\n\n".join(parts), continuations)

    def render_yes_no(self, query: Query, doc: Document, prefix: PromptPrefix = NO_PREFIX) -> RenderedPrompt:
        return self.render(TemplateKind.RG_YN, query, doc, yes_no_scheme(), prefix)

    def _fill(self, kind: TemplateKind, query: str, document: str, fields: dict[str, str]) -> str:
        values = {"query": query, "document": document, **fields}
        template = self.templates[kind]
        # single pass so braces inside substituted text are never re-expanded
        return _PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), template)


DEFAULT_RENDERER = PromptRenderer()


def render(
    kind: TemplateKind | str,
    query: Query,
    doc: Document,
    scheme: LabelScheme | None = None,
    prefix: PromptPrefix = NO_PREFIX,
    truncation: TruncationPolicy | None = None,
) -> RenderedPrompt:
    renderer = DEFAULT_RENDERER if truncation is None else PromptRenderer(truncation=truncation)
    return renderer.render(kind, query, doc, scheme, prefix)


def render_yes_no(
    query: Query,
    doc: Document,
    prefix: PromptPrefix = NO_PREFIX,
    truncation: TruncationPolicy | None = None,
) -> RenderedPrompt:
    return render(TemplateKind.RG_YN, query, doc, yes_no_scheme(), prefix, truncation)


def load_template(path: str | Path) -> str:
    """Read a template file; a single trailing newline is dropped."""
    text = Path(path).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    if "{document}" not in text:
        raise PromptError(f"{path}: template has no {{document}} placeholder")
    return text


def describe_labels(scheme: LabelScheme) -> str:
    """Quoted labels, most relevant first: '"A", "B", or "C"'."""
    quoted = [f'"{label}"' for label in reversed(scheme.labels)]
    return ", ".join(quoted[:-1]) + ", or " + quoted[-1]


def _check_scheme(kind: TemplateKind, scheme: LabelScheme | None) -> LabelScheme | None:
    if kind is TemplateKind.QG:
        return None
    if kind is TemplateKind.RG_YN:
        if scheme is None:
            return yes_no_scheme()
        if scheme.labels != YES_NO_LABELS:
            raise PromptError(f"RG_YN requires labels {list(YES_NO_LABELS)}, got {list(scheme.labels)}")
        return scheme
    if scheme is None:
        raise PromptError(f"{kind.value} requires a label scheme")
    if kind is TemplateKind.RG_TEXTUAL and scheme.kind is not SchemeKind.TEXTUAL:
        raise PromptError("RG_TEXTUAL requires a textual label scheme")
    if kind is TemplateKind.RG_SCALE and scheme.kind is not SchemeKind.RATING_SCALE:
        raise PromptError("RG_SCALE requires a rating-scale label scheme")
    return scheme


def _scheme_fields(kind: TemplateKind, scheme: LabelScheme | None) -> dict[str, str]:
    if kind is TemplateKind.RG_TEXTUAL:
        return {"labels": describe_labels(scheme)}
    if kind is TemplateKind.RG_SCALE:
        lo, hi = scheme.scale_bounds
        return {"lo": str(lo), "k": str(hi)}
    return {}
