"""Dataset schema, JSONL loading/validation, and split-aware lookup.

The canonical record format is one JSON object per line with the fields of
``RECORD_FIELDS``; other releases of figure-QA data can be converted to it
with a small mapping script. Question types are a closed 7-value vocabulary,
figure types are open strings (optionally restricted via an allow-list).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .prompting import CANONICAL_REFUSAL

QUESTION_TYPES = (
    "binary_visual",
    "binary_nonvisual",
    "mc4_visual",
    "mc4_nonvisual",
    "infinite_visual",
    "infinite_nonvisual",
    "unanswerable",
)
MC_TYPES = frozenset({"mc4_visual", "mc4_nonvisual"})
SPLITS = ("train", "validation", "test")

RECORD_FIELDS = (
    "instance_id",
    "image_id",
    "image_path",
    "question",
    "question_type",
    "figure_type",
    "compound",
    "figs_numb",
    "caption",
    "answer_options",
    "gold_answer",
    "split",
)


class CorpusError(ValueError):
    """Raised when a corpus file or record violates the schema."""


@dataclass(frozen=True)
class Instance:
    instance_id: str
    image_id: str
    image_path: str
    question: str
    question_type: str
    figure_type: str
    compound: bool
    figs_numb: int
    caption: str
    answer_options: tuple[tuple[str, str], ...]
    gold_answer: str
    split: str

    @property
    def is_unanswerable(self) -> bool:
        return self.question_type == "unanswerable"

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "question": self.question,
            "question_type": self.question_type,
            "figure_type": self.figure_type,
            "compound": self.compound,
            "figs_numb": self.figs_numb,
            "caption": self.caption,
            "answer_options": [{"key": k, "text": t} for k, t in self.answer_options],
            "gold_answer": self.gold_answer,
            "split": self.split,
        }


def _validate_instance(inst: Instance, where: str) -> None:
    if inst.question_type not in QUESTION_TYPES:
        raise CorpusError(
            f"{where}: unknown question_type {inst.question_type!r}; "
            f"allowed values: {', '.join(QUESTION_TYPES)}"
        )
    if inst.split not in SPLITS:
        raise CorpusError(
            f"{where}: unknown split {inst.split!r}; allowed values: {', '.join(SPLITS)}"
        )
    if not inst.instance_id:
        raise CorpusError(f"{where}: empty instance_id")
    if not inst.image_id:
        raise CorpusError(f"{where}: empty image_id")
    if not inst.figure_type:
        raise CorpusError(f"{where}: empty figure_type")
    if inst.figs_numb < 1:
        raise CorpusError(f"{where}: figs_numb must be >= 1, got {inst.figs_numb}")
    if not inst.compound and inst.figs_numb != 1:
        raise CorpusError(
            f"{where}: non-compound figure must have figs_numb=1, got {inst.figs_numb}"
        )
    if inst.question_type in MC_TYPES:
        if not inst.answer_options:
            raise CorpusError(f"{where}: {inst.question_type} instance needs answer_options")
    elif inst.answer_options:
        raise CorpusError(
            f"{where}: answer_options only allowed for {sorted(MC_TYPES)}, "
            f"got options on a {inst.question_type} instance"
        )
    if not inst.gold_answer:
        if inst.split != "test":
            raise CorpusError(f"{where}: gold_answer required outside the test split")
    elif inst.is_unanswerable and inst.gold_answer != CANONICAL_REFUSAL:
        raise CorpusError(
            f"{where}: unanswerable gold answer must be the canonical refusal string"
        )


def instance_from_record(record: dict, where: str = "record") -> Instance:
    if not isinstance(record, dict):
        raise CorpusError(f"{where}: expected a JSON object, got {type(record).__name__}")
    missing = [f for f in RECORD_FIELDS if f not in record]
    if missing:
        raise CorpusError(f"{where}: missing fields {missing}")
    options = record["answer_options"]
    if not isinstance(options, list):
        raise CorpusError(f"{where}: answer_options must be a list")
    parsed_options = []
    for opt in options:
        if not isinstance(opt, dict) or "key" not in opt or "text" not in opt:
            raise CorpusError(f"{where}: answer option entries need 'key' and 'text'")
        parsed_options.append((str(opt["key"]), str(opt["text"])))
    try:
        inst = Instance(
            instance_id=str(record["instance_id"]),
            image_id=str(record["image_id"]),
            image_path=str(record["image_path"] or ""),
            question=str(record["question"]),
            question_type=str(record["question_type"]).strip().lower(),
            figure_type=str(record["figure_type"]).strip(),
            compound=bool(record["compound"]),
            figs_numb=int(record["figs_numb"]),
            caption=str(record["caption"]),
            answer_options=tuple(parsed_options),
            gold_answer=str(record["gold_answer"] or ""),
            split=str(record["split"]).strip().lower(),
        )
    except (TypeError, ValueError) as exc:
        raise CorpusError(f"{where}: {exc}") from exc
    _validate_instance(inst, where)
    return inst


@dataclass
class Corpus:
    """Immutable-after-load instance list with id and (figure, question) indices.

    Instance order equals file order; that order is the retrieval tie-break
    order, so it must be stable across loads.
    """

    instances: list[Instance] = field(default_factory=list)
    by_image: dict[str, list[str]] = field(default_factory=dict)
    by_type: dict[tuple[str, str], list[str]] = field(default_factory=dict)
    _index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_instances(cls, instances: Iterable[Instance]) -> "Corpus":
        corpus = cls()
        for inst in instances:
            if inst.instance_id in corpus._index:
                raise CorpusError(f"duplicate instance_id {inst.instance_id!r}")
            corpus._index[inst.instance_id] = len(corpus.instances)
            corpus.instances.append(inst)
            corpus.by_image.setdefault(inst.image_id, []).append(inst.instance_id)
            corpus.by_type.setdefault(
                (inst.figure_type, inst.question_type), []
            ).append(inst.instance_id)
        return corpus

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def get(self, instance_id: str) -> Optional[Instance]:
        idx = self._index.get(instance_id)
        return None if idx is None else self.instances[idx]

    def __getitem__(self, instance_id: str) -> Instance:
        inst = self.get(instance_id)
        if inst is None:
            raise KeyError(f"unknown instance_id {instance_id!r}")
        return inst

    def index_of(self, instance_id: str) -> int:
        """Position in file order; used as the retrieval tie-break key."""
        idx = self._index.get(instance_id)
        if idx is None:
            raise KeyError(f"unknown instance_id {instance_id!r}")
        return idx

    def select(self, split: str) -> list[Instance]:
        """Instances of one split; 'dev' merges train and validation."""
        if split == "all":
            return list(self.instances)
        if split == "dev":
            wanted = {"train", "validation"}
        elif split in SPLITS:
            wanted = {split}
        else:
            raise ValueError(f"unknown split {split!r}; use one of {SPLITS + ('dev', 'all')}")
        return [inst for inst in self.instances if inst.split in wanted]


def load_corpus(
    path,
    split_filter: Optional[Sequence[str]] = None,
    allowed_figure_types: Optional[Sequence[str]] = None,
) -> Corpus:
    """Load and validate a JSONL corpus; instance order equals file order."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    wanted = set(split_filter) if split_filter is not None else None
    allowed_ft = set(allowed_figure_types) if allowed_figure_types is not None else None
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: malformed JSON ({exc.msg})") from exc
            inst = instance_from_record(record, where)
            if allowed_ft is not None and inst.figure_type not in allowed_ft:
                raise CorpusError(
                    f"{where}: unknown figure_type {inst.figure_type!r}; "
                    f"allowed values: {', '.join(sorted(allowed_ft))}"
                )
            if wanted is not None and inst.split not in wanted:
                continue
            instances.append(inst)
    return Corpus.from_instances(instances)


def dump_corpus(corpus: Corpus, path) -> None:
    """Serialize in instance order; load(dump(c)) == c."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in corpus.instances:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


def figure_type_shares(corpus: Corpus) -> dict[str, float]:
    """Fraction of instances per figure type; fractions sum to 1."""
    if not corpus.instances:
        raise CorpusError("cannot compute figure type shares of an empty corpus")
    counts: dict[str, int] = {}
    for inst in corpus.instances:
        counts[inst.figure_type] = counts.get(inst.figure_type, 0) + 1
    total = len(corpus.instances)
    return {ft: n / total for ft, n in sorted(counts.items())}
