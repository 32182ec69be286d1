"""Sources of label log-likelihoods: fixture and synthetic mocks, an HTTP client, and a cache.

The HTTP wire protocol served by a model adapter::

    POST /v1/score     {"prompt": str, "continuations": [str]}  -> {"log_likelihoods": [number]}
    POST /v1/generate  {"prompt": str, "max_tokens": int}        -> {"text": str}

A score response may also carry ``"token_log_likelihoods": [[number]]`` (one
list per continuation), used for per-token query-likelihood normalization.
4xx answers (body ``{"error": str}``) are fatal; 429, 5xx and timeouts are retried.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import threading
import time
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .core import Qrels

log = logging.getLogger(__name__)

API_URL_ENV = "GRADED_RANK_API_URL"
API_TOKEN_ENV = "GRADED_RANK_API_TOKEN"


class BackendError(RuntimeError):
    """Base class for failures while talking to a backend."""


class TransportError(BackendError):
    """Network-level or server-side failure; worth retrying."""


class ProtocolError(BackendError):
    """The server rejected the request or answered with a malformed body."""


class MissingFixtureError(BackendError):
    pass


class UnsupportedError(BackendError):
    pass


@dataclass(frozen=True)
class ScoreRequest:
    prompt: str
    continuations: tuple[str, ...]
    # correlation ids; never sent over the wire, used by the synthetic mock and logs
    query_id: str | None = None
    doc_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "continuations", tuple(self.continuations))
        if not self.continuations:
            raise ValueError("score request needs at least one continuation")
        if len(set(self.continuations)) != len(self.continuations):
            raise ValueError(f"duplicate continuations: {list(self.continuations)}")


@dataclass(frozen=True)
class ScoreResponse:
    log_likelihoods: tuple[float, ...]
    token_log_likelihoods: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "log_likelihoods", tuple(float(v) for v in self.log_likelihoods))
        if self.token_log_likelihoods is not None:
            object.__setattr__(
                self,
                "token_log_likelihoods",
                tuple(tuple(float(v) for v in toks) for toks in self.token_log_likelihoods),
            )

    def check(self, request: ScoreRequest) -> ScoreResponse:
        where = f"{request.query_id}/{request.doc_id}"
        if len(self.log_likelihoods) != len(request.continuations):
            raise ProtocolError(
                f"{where}: {len(self.log_likelihoods)} log-likelihoods for "
                f"{len(request.continuations)} continuations"
            )
        for cont, v in zip(request.continuations, self.log_likelihoods):
            if not math.isfinite(v):
                raise ProtocolError(f"{where}: non-finite log-likelihood {v} for label {cont!r}")
        if self.token_log_likelihoods is not None and len(self.token_log_likelihoods) != len(
            request.continuations
        ):
            raise ProtocolError(f"{where}: token_log_likelihoods misaligned with continuations")
        return self

    def to_json(self) -> dict:
        out: dict = {"log_likelihoods": list(self.log_likelihoods)}
        if self.token_log_likelihoods is not None:
            out["token_log_likelihoods"] = [list(t) for t in self.token_log_likelihoods]
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> ScoreResponse:
        return cls(data["log_likelihoods"], data.get("token_log_likelihoods"))


class Backend(ABC):
    """Anything that can score continuations of a prompt.

    Subclasses implement ``_score`` (and optionally ``_generate``); the public
    methods count calls so tests can observe cache behaviour.
    """

    #: responses depend on the request's query/doc ids, not only on its text
    id_sensitive = False

    def __init__(self) -> None:
        self._count_lock = threading.Lock()
        self.score_calls = 0
        self.generate_calls = 0

    @property
    @abstractmethod
    def identity(self) -> str: ...

    def score(self, request: ScoreRequest) -> ScoreResponse:
        with self._count_lock:
            self.score_calls += 1
        return self._score(request).check(request)

    def generate(
        self,
        prompt: str,
        *,
        continuations: Sequence[str] | None = None,
        query_id: str | None = None,
        doc_id: str | None = None,
    ) -> str:
        if not prompt:
            raise ValueError("generate needs a non-empty prompt")
        with self._count_lock:
            self.generate_calls += 1
        return self._generate(prompt, continuations, query_id, doc_id)

    @abstractmethod
    def _score(self, request: ScoreRequest) -> ScoreResponse: ...

    def _generate(self, prompt, continuations, query_id, doc_id) -> str:
        raise UnsupportedError(f"{type(self).__name__} does not support generation")


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _argmax_continuation(continuations: Sequence[str], values: Sequence[float]) -> str:
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    return continuations[best].strip()


class TableMock(Backend):
    """Replays log-likelihoods from a fixture table keyed by (prompt, continuation).

    A table value may be a number or a list of per-token log-likelihoods, in
    which case the continuation's log-likelihood is their sum.
    """

    def __init__(self, table: Mapping[tuple[str, str], float | Sequence[float]]):
        super().__init__()
        self._table: dict[tuple[str, str], tuple[float, ...]] = {}
        self._prompts: dict[str, str] = {}
        for (prompt, cont), value in table.items():
            digest = sha256_hex(prompt)
            self._prompts[digest] = prompt
            self._table[(digest, cont)] = _as_tokens(value)
        self._identity = "table:" + sha256_hex(
            json.dumps(sorted([k[0], k[1], list(v)] for k, v in self._table.items()))
        )[:16]

    @property
    def identity(self) -> str:
        return self._identity

    @classmethod
    def from_file(cls, path: str | Path) -> TableMock:
        """Load ``{"<sha256(prompt)>\\n<continuation>": value}`` plus its ``.prompts.json`` sidecar."""
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        sidecar = _sidecar_path(path)
        prompts = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
        mock = cls({})
        for key, value in raw.items():
            digest, sep, cont = key.partition("\n")
            if not sep:
                raise ValueError(f"{path}: fixture key without newline separator: {key!r}")
            mock._table[(digest, cont)] = _as_tokens(value)
            if digest in prompts:
                mock._prompts[digest] = prompts[digest]
        mock._identity = "table:" + sha256_hex(path.read_text(encoding="utf-8"))[:16]
        return mock

    def _lookup(self, prompt: str, cont: str) -> tuple[float, ...]:
        digest = sha256_hex(prompt)
        try:
            return self._table[(digest, cont)]
        except KeyError:
            raise MissingFixtureError(
                f"no fixture entry for prompt {digest[:12]} ({prompt[:60]!r}...) continuation {cont!r}"
            ) from None

    def _score(self, request: ScoreRequest) -> ScoreResponse:
        tokens = [self._lookup(request.prompt, c) for c in request.continuations]
        return ScoreResponse(tuple(math.fsum(t) for t in tokens), tuple(tokens))

    def _generate(self, prompt, continuations, query_id, doc_id) -> str:
        digest = sha256_hex(prompt)
        if continuations is None:
            continuations = [c for (d, c) in self._table if d == digest]
            if not continuations:
                raise MissingFixtureError(f"no fixture entries for prompt {digest[:12]}")
        values = [math.fsum(self._lookup(prompt, c)) for c in continuations]
        return _argmax_continuation(continuations, values)


def _as_tokens(value) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),)
    tokens = tuple(float(v) for v in value)
    if not tokens:
        raise ValueError("empty token list in fixture")
    return tokens


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".prompts.json")


def write_table_fixture(path: str | Path, table: Mapping[tuple[str, str], float | Sequence[float]]) -> None:
    """Write a table-mock fixture and its prompt sidecar."""
    path = Path(path)
    entries: dict[str, float | list[float]] = {}
    prompts: dict[str, str] = {}
    for (prompt, cont), value in table.items():
        digest = sha256_hex(prompt)
        prompts[digest] = prompt
        entries[f"{digest}\n{cont}"] = value if isinstance(value, (int, float)) else list(value)
    path.write_text(json.dumps(dict(sorted(entries.items())), indent=1) + "\n", encoding="utf-8")
    _sidecar_path(path).write_text(
        json.dumps(dict(sorted(prompts.items())), indent=1, ensure_ascii=False) + "\n", encoding="utf-8"
    )


@dataclass(frozen=True)
class SyntheticMockConfig:
    """Planted ground truth plus per-grade mean log-likelihood vectors.

    ``calibration`` maps grade -> one mean value per label. Additional
    calibrations for schemes of other sizes go in ``extra_calibrations``; a
    request picks the calibration whose vectors match its continuation count.
    """

    planted_qrels: Qrels
    calibration: Mapping[int, Sequence[float]]
    noise_sigma: float = 0.0
    seed: int = 0
    extra_calibrations: tuple[Mapping[int, Sequence[float]], ...] = ()

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        grades = set(self.planted_qrels.judgments.values())
        for cal in (self.calibration, *self.extra_calibrations):
            missing = grades - {int(g) for g in cal}
            if missing:
                raise ValueError(f"calibration lacks grades {sorted(missing)}")
            sizes = {len(v) for v in cal.values()}
            if len(sizes) != 1:
                raise ValueError(f"calibration vectors differ in length: {sorted(sizes)}")

    def tables(self) -> dict[int, dict[int, tuple[float, ...]]]:
        out: dict[int, dict[int, tuple[float, ...]]] = {}
        for cal in (self.calibration, *self.extra_calibrations):
            vectors = {int(g): tuple(float(x) for x in v) for g, v in cal.items()}
            size = len(next(iter(vectors.values())))
            if size in out:
                raise ValueError(f"two calibrations for {size}-label schemes")
            out[size] = vectors
        return out


class SyntheticMock(Backend):
    """Scores drawn from planted relevance grades plus seeded Gaussian noise.

    The noise for a (query, doc) pair depends only on the seed and the pair's
    ids, so results do not depend on request order or concurrency.
    """

    id_sensitive = True

    def __init__(self, config: SyntheticMockConfig):
        super().__init__()
        self.config = config
        self._tables = config.tables()
        blob = json.dumps(
            {
                "qrels": sorted([q, d, g] for (q, d), g in config.planted_qrels.items()),
                "cal": {str(n): {str(g): list(v) for g, v in sorted(t.items())} for n, t in sorted(self._tables.items())},
                "sigma": config.noise_sigma,
                "seed": config.seed,
            }
        )
        self._identity = "synthetic:" + sha256_hex(blob)[:16]

    @property
    def identity(self) -> str:
        return self._identity

    def _values(self, n: int, query_id: str | None, doc_id: str | None) -> np.ndarray:
        if query_id is None or doc_id is None:
            raise ProtocolError("synthetic mock needs query_id and doc_id on each request")
        table = self._tables.get(n)
        if table is None:
            raise ProtocolError(f"no calibration for {n}-label requests (have {sorted(self._tables)})")
        grade = self.config.planted_qrels.grade(query_id, doc_id)
        if grade not in table:
            raise ProtocolError(f"no calibration for grade {grade} ({query_id}/{doc_id})")
        mean = np.asarray(table[grade], dtype=float)
        if self.config.noise_sigma == 0:
            return mean
        return mean + self.noise(query_id, doc_id, n)

    def noise(self, query_id: str, doc_id: str, n: int) -> np.ndarray:
        pair = int.from_bytes(hashlib.sha256(f"{query_id}\x00{doc_id}".encode()).digest()[:8], "little")
        rng = np.random.default_rng([self.config.seed & (2**64 - 1), pair])
        return rng.normal(0.0, self.config.noise_sigma, size=n)

    def _score(self, request: ScoreRequest) -> ScoreResponse:
        values = self._values(len(request.continuations), request.query_id, request.doc_id)
        return ScoreResponse(tuple(float(v) for v in values))

    def _generate(self, prompt, continuations, query_id, doc_id) -> str:
        if not continuations:
            raise UnsupportedError("synthetic mock generation needs the label continuations")
        values = self._values(len(continuations), query_id, doc_id)
        return _argmax_continuation(continuations, list(values))


class HttpBackend(Backend):
    """Client for the score/generate protocol described in the module docstring."""

    retry_statuses = frozenset({429})

    def __init__(
        self,
        base_url: str | None = None,
        token: str | None = None,
        *,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        max_tokens: int = 16,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        super().__init__()
        base_url = base_url or os.environ.get(API_URL_ENV)
        if not base_url:
            raise ValueError(f"no endpoint configured; set {API_URL_ENV} or pass base_url")
        self.base_url = base_url.rstrip("/")
        self.token = token if token is not None else os.environ.get(API_TOKEN_ENV)
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.max_tokens = max_tokens
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._local = threading.local()

    @property
    def identity(self) -> str:
        return f"http:{self.base_url}"

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            if self.token:
                session.headers["Authorization"] = f"Bearer {self.token}"
            self._local.session = session
        return session

    def _post(self, route: str, body: dict) -> dict:
        url = self.base_url + route
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            try:
                resp = self._session().post(url, json=body, timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                last = TransportError(f"{url}: {exc}")
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError:
                        raise ProtocolError(f"{url}: response is not JSON") from None
                message = _error_message(resp)
                if resp.status_code in self.retry_statuses or resp.status_code >= 500:
                    last = TransportError(f"{url}: HTTP {resp.status_code}: {message}")
                else:
                    raise ProtocolError(f"{url}: HTTP {resp.status_code}: {message}")
            if attempt + 1 < self.max_attempts:
                delay = self.backoff_base * 2**attempt
                self._sleep(delay + self._rng.uniform(0, self.backoff_base))
                log.warning("retrying %s after %s (attempt %d)", url, last, attempt + 1)
        raise last

    def _score(self, request: ScoreRequest) -> ScoreResponse:
        data = self._post("/v1/score", {"prompt": request.prompt, "continuations": list(request.continuations)})
        try:
            return ScoreResponse.from_json(data)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed score response: {exc!r}") from None

    def _generate(self, prompt, continuations, query_id, doc_id) -> str:
        data = self._post("/v1/generate", {"prompt": prompt, "max_tokens": self.max_tokens})
        text = data.get("text") if isinstance(data, dict) else None
        if not isinstance(text, str):
            raise ProtocolError("malformed generate response: missing 'text'")
        return text


def _error_message(resp: requests.Response) -> str:
    try:
        return str(resp.json().get("error", resp.text))
    except (ValueError, AttributeError):
        return resp.text[:200]


class ScoreStore:
    """Append-only JSON-lines key/value store; ``path=None`` keeps it in memory.

    Only raw backend outputs are stored so every derived score can be
    recomputed without the backend.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        try:
            with self.path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        row = json.loads(line)
                        self._data[row["key"]] = row["value"]
                    except (ValueError, KeyError):
                        log.warning("%s:%d: skipping unreadable cache line", self.path, lineno)
        except OSError as exc:
            log.warning("cannot read cache %s: %s", self.path, exc)

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._data.get(key)

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            self._data[key] = value
            if self.path is None:
                return
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "value": value}) + "\n")
            except OSError as exc:
                log.warning("cannot write cache %s: %s", self.path, exc)

    def __len__(self) -> int:
        return len(self._data)


class CachedBackend(Backend):
    def __init__(self, inner: Backend, store: ScoreStore):
        super().__init__()
        self.inner = inner
        self.store = store
        self.id_sensitive = inner.id_sensitive
        self._key_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    @property
    def identity(self) -> str:
        return self.inner.identity

    def score_key(self, request: ScoreRequest) -> str:
        parts = [
            "score",
            self.inner.identity,
            sha256_hex(request.prompt),
            sha256_hex(json.dumps(list(request.continuations))),
        ]
        if self.inner.id_sensitive:
            parts += [str(request.query_id), str(request.doc_id)]
        return "|".join(parts)

    def _key_lock(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def _score(self, request: ScoreRequest) -> ScoreResponse:
        key = self.score_key(request)
        # per-key lock: concurrent identical requests reach the inner backend once
        with self._key_lock(key):
            hit = self.store.get(key)
            if hit is not None:
                return ScoreResponse.from_json(hit)
            response = self.inner.score(request)
            self.store.put(key, response.to_json())
            return response

    def _generate(self, prompt, continuations, query_id, doc_id) -> str:
        parts = ["generate", self.inner.identity, sha256_hex(prompt)]
        if continuations is not None:
            parts.append(sha256_hex(json.dumps(list(continuations))))
        if self.inner.id_sensitive:
            parts += [str(query_id), str(doc_id)]
        key = "|".join(parts)
        with self._key_lock(key):
            hit = self.store.get(key)
            if hit is not None:
                return hit["text"]
            text = self.inner.generate(prompt, continuations=continuations, query_id=query_id, doc_id=doc_id)
            self.store.put(key, {"text": text})
            return text


def cached(inner: Backend, store: ScoreStore | str | Path | None = None) -> CachedBackend:
    if not isinstance(store, ScoreStore):
        store = ScoreStore(store)
    return CachedBackend(inner, store)
