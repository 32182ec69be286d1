"""Experiment configuration: JSON file -> validated dataclasses."""

from __future__ import annotations

import copy
import dataclasses
import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .core import LabelScheme, SchemeError, SchemeKind, custom_scheme, preset_scheme, rating_scheme
from .prompt import DEFAULT_TEMPLATES, Exemplar, PromptPrefix, TemplateKind, load_template
from .scoring import DerivationStrategy


class ConfigError(ValueError):
    """Every problem found while validating a config, one per line."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


DEFAULT_STRATEGY = {
    TemplateKind.QG: DerivationStrategy.QUERY_GENERATION,
    TemplateKind.RG_YN: DerivationStrategy.BINARY_YES_NO,
    TemplateKind.RG_TEXTUAL: DerivationStrategy.EXPECTED_RELEVANCE,
    TemplateKind.RG_SCALE: DerivationStrategy.EXPECTED_RELEVANCE,
}

ALLOWED_STRATEGIES = {
    TemplateKind.QG: {DerivationStrategy.QUERY_GENERATION},
    TemplateKind.RG_YN: {
        DerivationStrategy.BINARY_YES_NO,
        DerivationStrategy.EXPECTED_RELEVANCE,
        DerivationStrategy.PEAK_RELEVANCE,
        DerivationStrategy.GENERATED_LABEL,
    },
    TemplateKind.RG_TEXTUAL: {
        DerivationStrategy.EXPECTED_RELEVANCE,
        DerivationStrategy.PEAK_RELEVANCE,
        DerivationStrategy.GENERATED_LABEL,
    },
    TemplateKind.RG_SCALE: {
        DerivationStrategy.EXPECTED_RELEVANCE,
        DerivationStrategy.PEAK_RELEVANCE,
        DerivationStrategy.GENERATED_LABEL,
    },
}

BACKEND_TYPES = ("mock_table", "synthetic", "http")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    corpus_path: str
    queries_path: str
    qrels_path: str
    run_path: str | None = None


@dataclass(frozen=True)
class FirstStageSpec:
    mode: str = "bm25"
    k: int = 100
    k1: float = 0.9
    b: float = 0.4
    stopwords: bool = False


@dataclass(frozen=True)
class MethodSpec:
    name: str
    template: TemplateKind
    scheme: dict | None = None
    values: tuple[float, ...] | None = None
    strategy: DerivationStrategy | None = None
    prefix: dict | None = None
    generated_source: str = "argmax"
    qg_normalization: str = "mean"
    backend: dict | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "template", TemplateKind(self.template))
        if self.strategy is None:
            object.__setattr__(self, "strategy", DEFAULT_STRATEGY[self.template])
        else:
            object.__setattr__(self, "strategy", DerivationStrategy(self.strategy))
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def label_scheme(self) -> LabelScheme | None:
        if self.template is TemplateKind.QG:
            return None
        if self.template is TemplateKind.RG_YN:
            base = custom_scheme(["No", "Yes"], [0, 1])
        else:
            base = build_scheme(self.scheme or {}, self.template)
        return base.with_values(self.values) if self.values is not None else base

    def prompt_prefix(self) -> PromptPrefix:
        spec = self.prefix or {}
        exemplars = tuple(
            Exemplar(e["query"], e["document"], e["label"]) for e in spec.get("exemplars", [])
        )
        return PromptPrefix(spec.get("preamble"), exemplars)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "template": self.template.value,
            "scheme": self.scheme,
            "values": list(self.values) if self.values is not None else None,
            "strategy": self.strategy.value,
            "prefix": self.prefix,
            "generated_source": self.generated_source,
            "qg_normalization": self.qg_normalization,
            "backend": self.backend,
        }
        return {k: v for k, v in out.items() if v is not None}


def build_scheme(spec: Mapping, template: TemplateKind | None = None) -> LabelScheme:
    """Scheme from ``{"preset": "RG3L"}``, ``{"scale": [lo, hi]}`` or ``{"labels": [...], "values": [...]}``."""
    if "preset" in spec:
        return preset_scheme(spec["preset"])
    if "scale" in spec:
        lo, hi = spec["scale"]
        return rating_scheme(int(lo), int(hi))
    if "labels" in spec:
        kind = spec.get("kind") or (
            SchemeKind.RATING_SCALE if template is TemplateKind.RG_SCALE else SchemeKind.TEXTUAL
        )
        return custom_scheme(spec["labels"], spec.get("values"), kind)
    raise SchemeError(f"scheme spec needs 'preset', 'scale' or 'labels': {dict(spec)}")


@dataclass(frozen=True)
class PromptSpec:
    truncation_chars: int = 4000
    continuation_prefix: str = " "
    templates: dict[str, str] = field(default_factory=dict)

    def load_templates(self) -> dict[TemplateKind, str]:
        out = dict(DEFAULT_TEMPLATES)
        for kind, path in self.templates.items():
            out[TemplateKind(kind)] = load_template(path)
        return out


@dataclass(frozen=True)
class EvalSpec:
    k: int = 10
    gain_mode: str = "linear"
    baseline: str | None = None
    alpha: float = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...]
    methods: tuple[MethodSpec, ...]
    backend: dict
    output_dir: str
    first_stage: FirstStageSpec = FirstStageSpec()
    prompt: PromptSpec = PromptSpec()
    eval: EvalSpec = EvalSpec()
    cache: dict = field(default_factory=lambda: {"enabled": True})
    exports: dict = field(default_factory=dict)
    concurrency: int = 8
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
        """Parse and validate; relative paths are resolved against ``base_dir``."""
        errors: list[str] = []
        base = Path(base_dir)

        def path(p):
            if p is None or Path(p).is_absolute():
                return p
            return str((base / p).resolve())

        raw = copy.deepcopy(dict(raw))
        known = {f for f in cls.__dataclass_fields__} | {"dataset"}
        for key in raw:
            if key not in known:
                errors.append(f"unknown top-level key {key!r}")

        ds_raw = raw.get("datasets")
        if ds_raw is None and "dataset" in raw:
            ds_raw = [raw["dataset"]]
        datasets: list[DatasetSpec] = []
        if not ds_raw:
            errors.append("no dataset configured ('dataset' or 'datasets')")
        for i, d in enumerate(ds_raw or []):
            try:
                spec = DatasetSpec(
                    name=d.get("name") or f"dataset{i}",
                    corpus_path=path(d["corpus_path"]),
                    queries_path=path(d["queries_path"]),
                    qrels_path=path(d["qrels_path"]),
                    run_path=path(d.get("run_path")),
                )
            except (KeyError, TypeError, AttributeError) as exc:
                errors.append(f"datasets[{i}]: missing field {exc}")
                continue
            datasets.append(spec)
        names = [d.name for d in datasets]
        if len(set(names)) != len(names):
            errors.append(f"duplicate dataset names: {names}")

        try:
            first_stage = FirstStageSpec(**raw.get("first_stage", {}))
        except TypeError as exc:
            errors.append(f"first_stage: {exc}")
            first_stage = FirstStageSpec()
        if first_stage.mode not in ("bm25", "run_file"):
            errors.append(f"first_stage.mode must be 'bm25' or 'run_file', got {first_stage.mode!r}")
        if first_stage.k < 1:
            errors.append(f"first_stage.k must be >= 1, got {first_stage.k}")
        for d in datasets:
            for label, p in (("corpus_path", d.corpus_path), ("queries_path", d.queries_path), ("qrels_path", d.qrels_path)):
                if not Path(p).exists():
                    errors.append(f"dataset {d.name}: {label} does not exist: {p}")
            if first_stage.mode == "run_file":
                if d.run_path is None:
                    errors.append(f"dataset {d.name}: first_stage.mode=run_file needs run_path")
                elif not Path(d.run_path).exists():
                    errors.append(f"dataset {d.name}: run_path does not exist: {d.run_path}")

        methods: list[MethodSpec] = []
        if not raw.get("methods"):
            errors.append("no methods configured")
        for i, m in enumerate(raw.get("methods") or []):
            where = f"methods[{i}] ({m.get('name', '?')})" if isinstance(m, Mapping) else f"methods[{i}]"
            try:
                spec = MethodSpec(**m)
            except (TypeError, ValueError) as exc:
                errors.append(f"{where}: {exc}")
                continue
            errors += [f"{where}: {e}" for e in _method_errors(spec)]
            if spec.backend is not None:
                errors += [f"{where}: {e}" for e in backend_errors(spec.backend, path)]
                spec = MethodSpec(**{**spec.to_dict(), "backend": _resolve_backend_paths(spec.backend, path)})
            methods.append(spec)
        mnames = [m.name for m in methods]
        dupes = sorted({n for n in mnames if mnames.count(n) > 1})
        if dupes:
            errors.append(f"duplicate method names: {dupes}")

        backend = raw.get("backend")
        if not isinstance(backend, Mapping):
            errors.append("backend: missing or not an object")
            backend = {}
        else:
            errors += [f"backend: {e}" for e in backend_errors(backend, path)]
            backend = _resolve_backend_paths(backend, path)

        try:
            prompt_raw = dict(raw.get("prompt", {}))
            prompt_raw["templates"] = {k: path(v) for k, v in prompt_raw.get("templates", {}).items()}
            prompt = PromptSpec(**prompt_raw)
            if prompt.truncation_chars <= 0:
                errors.append("prompt.truncation_chars must be positive")
            for kind, p in prompt.templates.items():
                if kind not in TemplateKind.__members__:
                    errors.append(f"prompt.templates: unknown template kind {kind!r}")
                elif not Path(p).exists():
                    errors.append(f"prompt.templates.{kind}: file does not exist: {p}")
        except TypeError as exc:
            errors.append(f"prompt: {exc}")
            prompt = PromptSpec()

        try:
            ev = EvalSpec(**raw.get("eval", {}))
        except TypeError as exc:
            errors.append(f"eval: {exc}")
            ev = EvalSpec()
        if ev.k < 1:
            errors.append(f"eval.k must be >= 1, got {ev.k}")
        if ev.gain_mode not in ("linear", "exponential"):
            errors.append(f"eval.gain_mode must be linear or exponential, got {ev.gain_mode!r}")
        if ev.baseline is not None and ev.baseline not in mnames:
            errors.append(f"eval.baseline {ev.baseline!r} is not a configured method")

        exports = dict(raw.get("exports", {}))
        for pair in exports.get("scatter", []):
            if len(pair) != 2 or any(n not in mnames for n in pair):
                errors.append(f"exports.scatter: {pair} must name two configured methods")
        for n in exports.get("marginals", []):
            if n not in mnames:
                errors.append(f"exports.marginals: {n!r} is not a configured method")

        cache = dict(raw.get("cache", {"enabled": True}))
        if cache.get("path"):
            cache["path"] = path(cache["path"])

        concurrency = raw.get("concurrency", 8)
        if not isinstance(concurrency, int) or concurrency < 1:
            errors.append(f"concurrency must be a positive integer, got {concurrency!r}")
        if "output_dir" not in raw:
            errors.append("output_dir is required")

        if errors:
            raise ConfigError(errors)
        return cls(
            datasets=tuple(datasets),
            methods=tuple(methods),
            backend=backend,
            output_dir=path(raw["output_dir"]),
            first_stage=first_stage,
            prompt=prompt,
            eval=ev,
            cache=cache,
            exports=exports,
            concurrency=concurrency,
            seed=int(raw.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = [m.to_dict() for m in self.methods]
        return out

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _method_errors(spec: MethodSpec) -> list[str]:
    errors = []
    if not spec.name:
        errors.append("method name must be non-empty")
    if spec.strategy not in ALLOWED_STRATEGIES[spec.template]:
        errors.append(f"strategy {spec.strategy.value} is not valid for template {spec.template.value}")
    if spec.template in (TemplateKind.RG_TEXTUAL, TemplateKind.RG_SCALE) and not spec.scheme:
        errors.append(f"template {spec.template.value} needs a scheme")
    if spec.template is TemplateKind.QG and (spec.scheme or spec.values):
        errors.append("QG takes no label scheme")
    try:
        scheme = spec.label_scheme()
        if scheme is not None:
            if spec.template is TemplateKind.RG_TEXTUAL and scheme.kind is not SchemeKind.TEXTUAL:
                errors.append("RG_TEXTUAL needs a textual scheme")
            if spec.template is TemplateKind.RG_SCALE and scheme.kind is not SchemeKind.RATING_SCALE:
                errors.append("RG_SCALE needs a rating-scale scheme")
            for ex in spec.prompt_prefix().exemplars:
                if ex.label not in scheme.labels:
                    errors.append(f"exemplar label {ex.label!r} not in scheme labels {list(scheme.labels)}")
    except (SchemeError, ValueError, KeyError, TypeError) as exc:
        errors.append(f"scheme: {exc}")
    if spec.generated_source not in ("argmax", "generate"):
        errors.append(f"generated_source must be 'argmax' or 'generate', got {spec.generated_source!r}")
    if spec.qg_normalization not in ("mean", "sum"):
        errors.append(f"qg_normalization must be 'mean' or 'sum', got {spec.qg_normalization!r}")
    return errors


def backend_errors(spec: Mapping, path=lambda p: p) -> list[str]:
    kind = spec.get("type")
    if kind not in BACKEND_TYPES:
        return [f"type must be one of {list(BACKEND_TYPES)}, got {kind!r}"]
    errors = []
    if kind == "mock_table":
        if "path" not in spec:
            errors.append("mock_table needs 'path'")
        elif not Path(path(spec["path"])).exists():
            errors.append(f"mock_table fixture does not exist: {path(spec['path'])}")
    elif kind == "synthetic":
        if not isinstance(spec.get("calibration"), Mapping):
            errors.append("synthetic needs a 'calibration' object (grade -> vector)")
        if spec.get("noise_sigma", 0.0) < 0:
            errors.append("noise_sigma must be non-negative")
        planted = spec.get("planted_qrels")
        if planted is not None and not Path(path(planted)).exists():
            errors.append(f"planted_qrels file does not exist: {path(planted)}")
    return errors


def _resolve_backend_paths(spec: Mapping, path) -> dict:
    spec = dict(spec)
    for key in ("path", "planted_qrels"):
        if spec.get(key) is not None:
            spec[key] = path(spec[key])
    return spec


def apply_overrides(raw: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values parse as JSON when possible, else as strings."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        dotted, sep, value = item.partition("=")
        if not sep or not dotted:
            raise ConfigError([f"override {item!r} is not of the form path=value"])
        try:
            parsed = json.loads(value)
        except ValueError:
            parsed = value
        node = raw
        keys = dotted.split(".")
        for key in keys[:-1]:
            if isinstance(node, list):
                node = node[int(key)]
            else:
                node = node.setdefault(key, {})
        if isinstance(node, list):
            node[int(keys[-1])] = parsed
        else:
            node[keys[-1]] = parsed
    return raw


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    return ExperimentConfig.from_dict(apply_overrides(raw, overrides), base_dir=path.parent)
