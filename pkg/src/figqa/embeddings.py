"""Unit-norm embedding storage, mean fusion, and exact cosine ranking.

Embedding files are the source of truth at retrieval time; the HTTP provider
(see fetch_embeddings) is only used offline to produce them. All similarity
math runs in float64, and ties are exact equalities resolved by candidate
order, so ranking is reproducible across runs.
"""

from __future__ import annotations

import base64
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Union

import numpy as np
import requests

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Instance

SPACES = ("question", "image", "joint")

NORM_TOLERANCE = 1e-6


class EmbeddingError(ValueError):
    """Schema or math violation in embedding data."""


class EmbeddingServiceError(RuntimeError):
    """Provider request failed after retries; safe to retry the whole call."""


@dataclass(frozen=True)
class EmbeddingRecord:
    instance_id: str
    space: str
    vector: np.ndarray


def normalize(vector) -> np.ndarray:
    """Scale to unit Euclidean norm; rejects (near-)zero vectors."""
    arr = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not np.isfinite(norm):
        raise EmbeddingError("cannot normalize a zero or non-finite vector")
    return arr / norm


def fuse(question_vec, image_vec) -> np.ndarray:
    """Normalized mean of a question vector and an image vector.

    Inputs are expected unit-norm; antipodal inputs have a zero mean and are
    rejected rather than silently renormalized.
    """
    q = np.asarray(question_vec, dtype=np.float64)
    i = np.asarray(image_vec, dtype=np.float64)
    if q.shape != i.shape:
        raise EmbeddingError(f"dimension mismatch: {q.shape} vs {i.shape}")
    mean = (q + i) / 2.0
    if float(np.linalg.norm(mean)) == 0.0:
        raise EmbeddingError("antipodal vectors fuse to zero; no direction to keep")
    return normalize(mean)


def cosine(a, b) -> float:
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise EmbeddingError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine undefined for zero vectors")
    return float(np.dot(va, vb) / (na * nb))


class EmbeddingStore:
    """Per-space vector tables keyed by instance id, immutable after load."""

    def __init__(self) -> None:
        self._spaces: dict[str, tuple[int, dict[str, np.ndarray]]] = {}

    def add(self, record: EmbeddingRecord) -> None:
        if record.space not in SPACES:
            raise EmbeddingError(
                f"unknown embedding space {record.space!r}; allowed: {', '.join(SPACES)}"
            )
        vec = np.asarray(record.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise EmbeddingError(f"{record.instance_id}: vector must be 1-D and non-empty")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise EmbeddingError(
                f"{record.instance_id}: vector in space {record.space!r} has norm "
                f"{norm:.8f}, expected 1 within {NORM_TOLERANCE}"
            )
        dim, table = self._spaces.setdefault(record.space, (vec.size, {}))
        if vec.size != dim:
            raise EmbeddingError(
                f"{record.instance_id}: dimension {vec.size} disagrees with "
                f"space {record.space!r} dimension {dim}"
            )
        if record.instance_id in table:
            raise EmbeddingError(
                f"duplicate embedding for {record.instance_id!r} in space {record.space!r}"
            )
        table[record.instance_id] = vec

    def spaces(self) -> list[str]:
        return sorted(self._spaces)

    def dimension(self, space: str) -> int:
        if space not in self._spaces:
            raise EmbeddingError(f"no embeddings loaded for space {space!r}")
        return self._spaces[space][0]

    def has(self, space: str, instance_id: str) -> bool:
        entry = self._spaces.get(space)
        return entry is not None and instance_id in entry[1]

    def vector(self, space: str, instance_id: str) -> np.ndarray:
        entry = self._spaces.get(space)
        if entry is None or instance_id not in entry[1]:
            raise EmbeddingError(
                f"missing embedding for instance {instance_id!r} in space {space!r}"
            )
        return entry[1][instance_id]


def rank_vectors(
    query_vec,
    candidate_ids: Sequence[str],
    candidate_vectors: Sequence[np.ndarray],
) -> list[tuple[str, float]]:
    """Sort candidates by cosine similarity to the query, descending.

    Exact float64 similarity ties keep the order of candidate_ids, so passing
    candidates in corpus order implements first-in-corpus tie-breaking.
    """
    if len(candidate_ids) != len(candidate_vectors):
        raise EmbeddingError("candidate ids and vectors must be parallel")
    if not candidate_ids:
        return []
    qvec = np.asarray(query_vec, dtype=np.float64)
    qnorm = float(np.linalg.norm(qvec))
    if qnorm == 0.0:
        raise EmbeddingError("cosine undefined for zero query vector")
    matrix = np.stack([np.asarray(v, dtype=np.float64) for v in candidate_vectors])
    row_norms = np.linalg.norm(matrix, axis=1)
    if np.any(row_norms == 0.0):
        raise EmbeddingError("cosine undefined for zero candidate vectors")
    sims = (matrix @ qvec) / (row_norms * qnorm)
    order = np.argsort(-sims, kind="stable")
    return [(candidate_ids[i], float(sims[i])) for i in order]


def rank(
    store: EmbeddingStore,
    space: str,
    query: Union[str, np.ndarray, Sequence[float]],
    candidate_ids: Sequence[str],
) -> list[tuple[str, float]]:
    """rank_vectors over one stored space; query may be an id or a vector."""
    if isinstance(query, str):
        qvec = store.vector(space, query)
    else:
        qvec = np.asarray(query, dtype=np.float64)
    vectors = [store.vector(space, cid) for cid in candidate_ids]
    return rank_vectors(qvec, candidate_ids, vectors)


# ---------------------------------------------------------------------------
# File format: JSONL {"instance_id", "space", "vector": [floats]}
# ---------------------------------------------------------------------------

def load_embedding_file(path, store: Optional[EmbeddingStore] = None) -> EmbeddingStore:
    store = store if store is not None else EmbeddingStore()
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{path.name}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                record = EmbeddingRecord(
                    instance_id=str(raw["instance_id"]),
                    space=str(raw["space"]),
                    vector=np.asarray(raw["vector"], dtype=np.float64),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise EmbeddingError(f"{path.name}:{lineno}: {exc}") from exc
            store.add(record)
    return store


def write_embedding_file(records: Iterable[EmbeddingRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "instance_id": record.instance_id,
                        "space": record.space,
                        "vector": [float(x) for x in record.vector],
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Provider client (offline producer; never called at retrieval time)
# ---------------------------------------------------------------------------

def _item_for_space(instance: "Instance", space: str) -> dict:
    item: dict = {"instance_id": instance.instance_id}
    if space in ("question", "joint"):
        item["text"] = instance.question
    if space in ("image", "joint"):
        data = Path(instance.image_path).read_bytes()
        item["image_base64"] = base64.b64encode(data).decode("ascii")
    return item


def fetch_embeddings(
    provider_endpoint: str,
    instances: Sequence["Instance"],
    space: str,
    batch_size: int = 32,
    max_concurrency: int = 1,
    timeout: float = 60.0,
    retries: int = 3,
    backoff: float = 0.5,
) -> list[EmbeddingRecord]:
    """Embed instances via the provider's POST /embed, normalizing on receipt.

    Batches may be fetched concurrently (bounded); results are merged back
    in instance order so output order never depends on scheduling.
    """
    if space not in SPACES:
        raise EmbeddingError(f"unknown embedding space {space!r}; allowed: {', '.join(SPACES)}")
    if not instances:
        return []
    url = provider_endpoint.rstrip("/") + "/embed"
    batches = [
        list(instances[i : i + batch_size]) for i in range(0, len(instances), batch_size)
    ]

    def post_batch(batch: list["Instance"]) -> list[EmbeddingRecord]:
        payload = {"space": space, "items": [_item_for_space(inst, space) for inst in batch]}
        last_error: Exception | None = None
        for attempt in range(retries + 1):
            try:
                response = requests.post(url, json=payload, timeout=timeout)
                if response.status_code >= 500 or response.status_code == 503:
                    raise EmbeddingServiceError(
                        f"provider returned {response.status_code}: {response.text[:200]}"
                    )
                response.raise_for_status()
                body = response.json()
                break
            except (requests.RequestException, EmbeddingServiceError) as exc:
                last_error = exc
                if attempt == retries:
                    raise EmbeddingServiceError(
                        f"embed request failed after {retries + 1} attempts: {exc}"
                    ) from exc
                time.sleep(backoff * (2**attempt))
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(batch):
            raise EmbeddingError(
                f"provider returned {len(vectors) if isinstance(vectors, list) else 'no'} "
                f"vectors for a batch of {len(batch)}"
            )
        records = []
        for inst, entry in zip(batch, vectors):
            if entry.get("instance_id") != inst.instance_id:
                raise EmbeddingError(
                    f"provider broke item order: expected {inst.instance_id!r}, "
                    f"got {entry.get('instance_id')!r}"
                )
            records.append(
                EmbeddingRecord(
                    instance_id=inst.instance_id,
                    space=space,
                    vector=normalize(np.asarray(entry["vector"], dtype=np.float64)),
                )
            )
        return records

    if max_concurrency <= 1 or len(batches) == 1:
        results = [post_batch(batch) for batch in batches]
    else:
        with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
            results = list(pool.map(post_batch, batches))

    merged = [record for batch in results for record in batch]
    dims = {record.vector.size for record in merged}
    if len(dims) > 1:
        raise EmbeddingError(f"provider returned inconsistent dimensions: {sorted(dims)}")
    return merged
