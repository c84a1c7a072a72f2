"""Prompt execution against pluggable chat backends, with confidence scoring
and an append-only prediction cache.

Backends must return per-token log-probabilities (natural log); a backend
that omits them is a hard error because confidence routing depends on them.
Answer confidence is exp(mean(token logprobs)) over all completion tokens.
The mock backend replays a script file and makes the whole pipeline runnable
offline and byte-deterministically.
"""

from __future__ import annotations

import base64
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import requests

from .corpus import Corpus
from .embeddings import EmbeddingStore
from .prompting import ImagePart, PromptBundle, is_refusal_text, render_bundle
from .retrieval import RetrievalSpec, select

PREDICTION_FIELDS = (
    "instance_id",
    "config_id",
    "answer_text",
    "token_logprobs",
    "confidence",
    "created_at",
)


class BackendError(RuntimeError):
    """Permanent backend failure; retrying the same request will not help."""


class TransientBackendError(BackendError):
    """Failure worth retrying (connection problems, 5xx, timeouts)."""


class CacheError(RuntimeError):
    """Prediction cache is missing an entry or contains invalid data."""


@dataclass(frozen=True)
class DecodeParams:
    """Decoding knobs sent to the backend. Greedy by default; max_tokens is
    a pragmatic default since answers are short."""

    temperature: float = 0.0
    max_tokens: int = 256


def confidence(token_logprobs: Sequence[float]) -> float:
    """exp(mean(logprobs)); strictly increasing in every component, in (0, 1]."""
    if len(token_logprobs) == 0:
        raise ValueError("confidence undefined for empty token list")
    for lp in token_logprobs:
        if lp > 0:
            raise ValueError(f"log-probability {lp} is positive; probabilities cannot exceed 1")
    return math.exp(sum(token_logprobs) / len(token_logprobs))


@dataclass(frozen=True)
class RunConfig:
    """One experimental configuration: backend name plus retrieval spec.

    config_id is canonical and parseable, e.g. "pixtral:2s_q_img_f".
    """

    config_id: str
    backend: str
    spec: RetrievalSpec
    notes: str = ""

    @classmethod
    def make(cls, backend: str, spec: RetrievalSpec, notes: str = "") -> "RunConfig":
        return cls(config_id=f"{backend}:{spec.tag()}", backend=backend, spec=spec, notes=notes)

    @classmethod
    def parse(cls, config_id: str, notes: str = "") -> "RunConfig":
        backend, sep, tag = config_id.partition(":")
        if not sep or not backend or not tag:
            raise ValueError(f"config_id must look like 'backend:tag', got {config_id!r}")
        return cls(
            config_id=config_id,
            backend=backend,
            spec=RetrievalSpec.from_tag(tag),
            notes=notes,
        )


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    config_id: str
    answer_text: str
    token_logprobs: tuple[float, ...]
    confidence: float
    created_at: str

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "config_id": self.config_id,
            "answer_text": self.answer_text,
            "token_logprobs": list(self.token_logprobs),
            "confidence": self.confidence,
            "created_at": self.created_at,
        }

    @classmethod
    def from_record(cls, record: dict, where: str = "cache") -> "Prediction":
        missing = [f for f in PREDICTION_FIELDS if f not in record]
        if missing:
            raise CacheError(f"{where}: prediction record missing fields {missing}")
        pred = cls(
            instance_id=str(record["instance_id"]),
            config_id=str(record["config_id"]),
            answer_text=str(record["answer_text"]),
            token_logprobs=tuple(float(x) for x in record["token_logprobs"]),
            confidence=float(record["confidence"]),
            created_at=str(record["created_at"]),
        )
        if abs(pred.confidence - confidence(pred.token_logprobs)) > 1e-9:
            raise CacheError(
                f"{where}: stored confidence {pred.confidence} disagrees with its logprobs"
            )
        return pred


def make_prediction(
    instance_id: str, config_id: str, answer_text: str, token_logprobs: Sequence[float]
) -> Prediction:
    return Prediction(
        instance_id=instance_id,
        config_id=config_id,
        answer_text=answer_text,
        token_logprobs=tuple(float(x) for x in token_logprobs),
        confidence=confidence(token_logprobs),
        created_at=datetime.now(timezone.utc).isoformat(),
    )


def is_refusal(prediction: Prediction) -> bool:
    return is_refusal_text(prediction.answer_text)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class MockBackend:
    """Replays a script file mapping instance_id -> {answer, token_logprobs}.

    A script may scope entries per config via {"configs": {config_id: {...}}}
    so one backend name can serve several configurations with different
    scripted outputs.
    """

    def __init__(self, script: dict, config_id: Optional[str] = None) -> None:
        if "configs" in script:
            if config_id is None or config_id not in script["configs"]:
                raise BackendError(
                    f"mock script is per-config and has no section for {config_id!r}"
                )
            self._table = script["configs"][config_id]
        else:
            self._table = script

    @classmethod
    def from_file(cls, path, config_id: Optional[str] = None) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), config_id=config_id)

    def complete(self, bundle: PromptBundle, decode: DecodeParams) -> tuple[str, list[float]]:
        entry = self._table.get(bundle.query_id)
        if entry is None:
            raise BackendError(f"mock script has no entry for instance {bundle.query_id!r}")
        return str(entry["answer"]), [float(x) for x in entry["token_logprobs"]]


class HttpBackend:
    """Chat-completions-style JSON-over-HTTP backend with logprobs."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        session: Optional[requests.Session] = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def _part_payload(self, part) -> dict:
        if isinstance(part, ImagePart):
            data = Path(part.image_path).read_bytes()
            encoded = base64.b64encode(data).decode("ascii")
            return {
                "type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{encoded}"},
            }
        return {"type": "text", "text": part.text}

    def messages(self, bundle: PromptBundle) -> list[dict]:
        out = [{"role": "system", "content": bundle.system_message}]
        for turn in bundle.turns:
            if turn.role == "assistant":
                out.append({"role": "assistant", "content": turn.parts[0].text})
            else:
                out.append(
                    {"role": "user", "content": [self._part_payload(p) for p in turn.parts]}
                )
        return out

    def complete(self, bundle: PromptBundle, decode: DecodeParams) -> tuple[str, list[float]]:
        payload = {
            "model": self.model,
            "temperature": decode.temperature,
            "max_tokens": decode.max_tokens,
            "logprobs": True,
            "messages": self.messages(bundle),
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendError(f"request failed: {exc}") from exc
        if response.status_code >= 500:
            raise TransientBackendError(f"backend returned {response.status_code}")
        if response.status_code != 200:
            raise BackendError(
                f"backend returned {response.status_code}: {response.text[:200]}"
            )
        body = response.json()
        try:
            choice = body["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc
        logprobs_block = choice.get("logprobs")
        if not logprobs_block or logprobs_block.get("content") is None:
            raise BackendError("backend response omitted token logprobs")
        return str(text), [float(entry["logprob"]) for entry in logprobs_block["content"]]


class BackendRegistry:
    """Backend name -> construction settings, from the project config file.

    HTTP entries: {"type": "http", "base_url", "model", "api_key_env"?}.
    Mock entries: {"type": "mock", "script": path}. Credentials only ever
    come from the named environment variable.
    """

    def __init__(self, entries: dict, base_dir: Optional[Path] = None) -> None:
        self.entries = entries
        self.base_dir = base_dir or Path(".")

    def build(self, backend_name: str, config_id: str, env: Optional[dict] = None):
        import os

        entry = self.entries.get(backend_name)
        if entry is None:
            raise BackendError(
                f"backend {backend_name!r} is not registered; known: {sorted(self.entries)}"
            )
        kind = entry.get("type", "http")
        if kind == "mock":
            script_path = Path(entry["script"])
            if not script_path.is_absolute():
                script_path = self.base_dir / script_path
            return MockBackend.from_file(script_path, config_id=config_id)
        if kind == "http":
            env = env if env is not None else os.environ
            api_key = None
            if entry.get("api_key_env"):
                api_key = env.get(entry["api_key_env"])
            return HttpBackend(
                base_url=entry["base_url"],
                model=entry["model"],
                api_key=api_key,
                timeout=float(entry.get("timeout", 120.0)),
            )
        raise BackendError(f"unknown backend type {kind!r} for {backend_name!r}")


def run(
    bundle: PromptBundle,
    backend,
    decode: Optional[DecodeParams] = None,
    retries: int = 3,
    backoff: float = 0.5,
) -> tuple[str, list[float]]:
    """Execute one bundle, retrying transient failures with capped backoff."""
    decode = decode or DecodeParams()
    attempt = 0
    while True:
        try:
            text, logprobs = backend.complete(bundle, decode)
            break
        except TransientBackendError:
            if attempt >= retries:
                raise
            time.sleep(min(backoff * (2**attempt), 8.0))
            attempt += 1
    if not logprobs:
        raise BackendError(
            f"backend returned an empty completion for {bundle.query_id!r}; "
            "confidence is undefined"
        )
    return text, logprobs


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

def cache_filename(config_id: str) -> str:
    return config_id.replace(":", "__") + ".jsonl"


class RunCache:
    """Append-only JSONL cache of predictions, keyed by (instance, config)."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self.entries: dict[tuple[str, str], Prediction] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    pred = Prediction.from_record(record, where=f"{self.path.name}:{lineno}")
                    self.entries[(pred.instance_id, pred.config_id)] = pred

    def __len__(self) -> int:
        return len(self.entries)

    def has(self, instance_id: str, config_id: str) -> bool:
        return (instance_id, config_id) in self.entries

    def get(self, instance_id: str, config_id: str) -> Prediction:
        pred = self.entries.get((instance_id, config_id))
        if pred is None:
            raise CacheError(f"no cached prediction for ({instance_id!r}, {config_id!r})")
        return pred

    def append(self, prediction: Prediction) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(prediction.to_record(), ensure_ascii=False) + "\n")
        self.entries[(prediction.instance_id, prediction.config_id)] = prediction

    def predictions(self, config_id: Optional[str] = None) -> list[Prediction]:
        preds = list(self.entries.values())
        if config_id is not None:
            preds = [p for p in preds if p.config_id == config_id]
        return preds


class CacheSet:
    """Read-only view over every cache file in a directory."""

    def __init__(self, cache_dir) -> None:
        self.cache_dir = Path(cache_dir)
        self.entries: dict[tuple[str, str], Prediction] = {}
        if self.cache_dir.exists():
            for path in sorted(self.cache_dir.glob("*.jsonl")):
                cache = RunCache(path)
                self.entries.update(cache.entries)

    def get(self, instance_id: str, config_id: str) -> Prediction:
        pred = self.entries.get((instance_id, config_id))
        if pred is None:
            raise CacheError(
                f"missing cached prediction for instance {instance_id!r} "
                f"under config {config_id!r}"
            )
        return pred

    def has(self, instance_id: str, config_id: str) -> bool:
        return (instance_id, config_id) in self.entries

    def config_ids(self) -> list[str]:
        return sorted({cid for _, cid in self.entries})


# ---------------------------------------------------------------------------
# Batch runner
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    predictions: list[Prediction] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    backend_calls: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def run_config(
    corpus: Corpus,
    store: Optional[EmbeddingStore],
    config: RunConfig,
    instance_ids: Sequence[str],
    cache: RunCache,
    backend,
    decode: Optional[DecodeParams] = None,
    concurrency: int = 1,
    force: bool = False,
    retries: int = 3,
    backoff: float = 0.5,
) -> RunReport:
    """Retrieve, render, and execute every instance under one configuration.

    Cached (instance, config) pairs are skipped unless force is set.
    Per-instance failures go into the report instead of aborting the batch;
    cache appends happen in instance order so reruns are reproducible.
    """
    decode = decode or DecodeParams()
    report = RunReport()
    if config.spec.shots > 0 and store is None:
        raise ValueError(f"config {config.config_id!r} needs embeddings but no store was given")

    todo = []
    for instance_id in instance_ids:
        if not force and cache.has(instance_id, config.config_id):
            report.predictions.append(cache.get(instance_id, config.config_id))
        else:
            todo.append(instance_id)

    def execute(instance_id: str) -> tuple[str, list[float]]:
        query = corpus[instance_id]
        selection = None
        if config.spec.shots > 0:
            selection = select(corpus, store, query, config.spec)
        bundle = render_bundle(query, selection, corpus)
        return run(bundle, backend, decode, retries=retries, backoff=backoff)

    def run_one(instance_id: str):
        try:
            return execute(instance_id), None
        except Exception as exc:  # collected, not raised: batch must continue
            return None, f"{type(exc).__name__}: {exc}"

    if concurrency > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            outcomes = list(pool.map(run_one, todo))
    else:
        outcomes = [run_one(instance_id) for instance_id in todo]

    for instance_id, (result, error) in zip(todo, outcomes):
        if error is not None:
            report.failures.append({"instance_id": instance_id, "error": error})
            continue
        text, logprobs = result
        prediction = make_prediction(instance_id, config.config_id, text, logprobs)
        cache.append(prediction)
        report.predictions.append(prediction)
        report.backend_calls += 1
    return report
