"""Few-shot example selection.

Candidates always come from the train split with the query's own image
excluded. The filtered pool restricts to the query's figure type and, when
possible, its subfigure count, relaxing stepwise (type+count -> type -> all)
when a level is empty. Two-shot selections pair the best answerable with the
best unanswerable candidate from one shared ranking, answerable first.
Question types are never used to filter the pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

from .corpus import Corpus, Instance
from .embeddings import EmbeddingStore, fuse, rank_vectors

RETRIEVAL_SPACES = ("question", "fused_question_image", "joint")
FILTER_MODES = ("filtered", "unfiltered")

_SPACE_TAGS = {"question": "q", "fused_question_image": "q_img", "joint": "joint"}
_TAG_SPACES = {v: k for k, v in _SPACE_TAGS.items()}
_FILTER_TAGS = {"filtered": "f", "unfiltered": "nf"}
_TAG_FILTERS = {v: k for k, v in _FILTER_TAGS.items()}


class RetrievalError(ValueError):
    """Raised when a selection cannot satisfy its contract."""


@dataclass(frozen=True)
class RetrievalSpec:
    """Shot count, similarity space, and pool filtering for one configuration.

    Zero-shot specs keep the default space/filter so their canonical tag stays
    stable ("0s" regardless of irrelevant fields).
    """

    shots: int = 0
    space: str = "question"
    filter_mode: str = "filtered"

    def __post_init__(self) -> None:
        if self.shots not in (0, 1, 2):
            raise RetrievalError(f"shots must be 0, 1, or 2, got {self.shots}")
        if self.space not in RETRIEVAL_SPACES:
            raise RetrievalError(
                f"space must be one of {RETRIEVAL_SPACES}, got {self.space!r}"
            )
        if self.filter_mode not in FILTER_MODES:
            raise RetrievalError(
                f"filter_mode must be one of {FILTER_MODES}, got {self.filter_mode!r}"
            )

    def tag(self) -> str:
        if self.shots == 0:
            return "0s"
        return f"{self.shots}s_{_SPACE_TAGS[self.space]}_{_FILTER_TAGS[self.filter_mode]}"

    @classmethod
    def from_tag(cls, tag: str) -> "RetrievalSpec":
        if tag == "0s":
            return cls()
        parts = tag.split("_")
        if len(parts) < 3 or not parts[0].endswith("s"):
            raise RetrievalError(f"unparseable retrieval tag {tag!r}")
        try:
            shots = int(parts[0][:-1])
        except ValueError as exc:
            raise RetrievalError(f"unparseable retrieval tag {tag!r}") from exc
        space_tag = "_".join(parts[1:-1])
        if space_tag not in _TAG_SPACES or parts[-1] not in _TAG_FILTERS:
            raise RetrievalError(f"unparseable retrieval tag {tag!r}")
        return cls(shots=shots, space=_TAG_SPACES[space_tag], filter_mode=_TAG_FILTERS[parts[-1]])


@dataclass(frozen=True)
class FewShotSelection:
    example_ids: tuple[str, ...]
    similarities: tuple[float, ...]
    pool_size: int


def candidate_pool(corpus: Corpus, query: Instance, filter_mode: str) -> list[str]:
    """Train-split candidate ids in corpus order, never sharing the query image."""
    if filter_mode not in FILTER_MODES:
        raise RetrievalError(f"filter_mode must be one of {FILTER_MODES}, got {filter_mode!r}")
    train = [inst for inst in corpus.instances if inst.split == "train"]
    if not train:
        raise RetrievalError("corpus has no train split to retrieve from")
    unfiltered = [inst for inst in train if inst.image_id != query.image_id]
    if filter_mode == "unfiltered":
        return [inst.instance_id for inst in unfiltered]
    same_type = [inst for inst in unfiltered if inst.figure_type == query.figure_type]
    same_type_and_count = [inst for inst in same_type if inst.figs_numb == query.figs_numb]
    for level in (same_type_and_count, same_type, unfiltered):
        if level:
            return [inst.instance_id for inst in level]
    return []


def _query_vector(store: EmbeddingStore, query: Instance, space: str):
    if space == "question":
        return store.vector("question", query.instance_id)
    if space == "joint":
        return store.vector("joint", query.instance_id)
    return fuse(
        store.vector("question", query.instance_id),
        store.vector("image", query.instance_id),
    )


def _candidate_vector(store: EmbeddingStore, candidate_id: str, space: str):
    if space == "question":
        return store.vector("question", candidate_id)
    if space == "joint":
        return store.vector("joint", candidate_id)
    return fuse(
        store.vector("question", candidate_id),
        store.vector("image", candidate_id),
    )


def ranked_candidates(
    corpus: Corpus,
    store: EmbeddingStore,
    query: Instance,
    spec: RetrievalSpec,
) -> tuple[list[tuple[str, float]], int]:
    """Full similarity ranking over the spec's pool, plus the pool size."""
    pool = candidate_pool(corpus, query, spec.filter_mode)
    if not pool:
        raise RetrievalError(
            f"empty candidate pool for query {query.instance_id!r}"
        )
    qvec = _query_vector(store, query, spec.space)
    vectors = [_candidate_vector(store, cid, spec.space) for cid in pool]
    return rank_vectors(qvec, pool, vectors), len(pool)


def select(
    corpus: Corpus,
    store: EmbeddingStore,
    query: Instance,
    spec: RetrievalSpec,
) -> FewShotSelection:
    """Pick the spec's few-shot examples for one query instance."""
    if spec.shots == 0:
        return FewShotSelection((), (), 0)
    ranking, pool_size = ranked_candidates(corpus, store, query, spec)
    if spec.shots == 1:
        top_id, top_sim = ranking[0]
        return FewShotSelection((top_id,), (top_sim,), pool_size)
    answerable = next(
        ((cid, sim) for cid, sim in ranking if not corpus[cid].is_unanswerable), None
    )
    unanswerable = next(
        ((cid, sim) for cid, sim in ranking if corpus[cid].is_unanswerable), None
    )
    if unanswerable is None:
        raise RetrievalError(
            f"pool for query {query.instance_id!r} has no unanswerable example "
            "to fill the two-shot slot"
        )
    if answerable is None:
        raise RetrievalError(
            f"pool for query {query.instance_id!r} has no answerable example "
            "to fill the two-shot slot"
        )
    return FewShotSelection(
        (answerable[0], unanswerable[0]),
        (answerable[1], unanswerable[1]),
        pool_size,
    )


def match_rate(
    selections: Union[Mapping[str, FewShotSelection], Iterable[tuple[str, FewShotSelection]]],
    corpus: Corpus,
) -> dict[str, float]:
    """Per question type, how often a one-shot example shares the query's type."""
    items = selections.items() if isinstance(selections, Mapping) else list(selections)
    totals: dict[str, int] = {}
    matches: dict[str, int] = {}
    count = 0
    for query_id, selection in items:
        if len(selection.example_ids) != 1:
            raise RetrievalError(
                f"match_rate expects one-shot selections, got {len(selection.example_ids)} "
                f"examples for query {query_id!r}"
            )
        qtype = corpus[query_id].question_type
        totals[qtype] = totals.get(qtype, 0) + 1
        if corpus[selection.example_ids[0]].question_type == qtype:
            matches[qtype] = matches.get(qtype, 0) + 1
        count += 1
    if count == 0:
        raise RetrievalError("match_rate needs at least one selection")
    return {qtype: matches.get(qtype, 0) / total for qtype, total in sorted(totals.items())}


def selection_record(query_id: str, selection: FewShotSelection, spec: RetrievalSpec) -> str:
    """One audit-log JSONL line for an executed selection."""
    return json.dumps(
        {
            "query_id": query_id,
            "example_ids": list(selection.example_ids),
            "similarities": list(selection.similarities),
            "spec": spec.tag(),
        }
    )
