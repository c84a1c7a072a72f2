from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from figqa.corpus import QUESTION_TYPES, Corpus, Instance
from figqa.embeddings import EmbeddingRecord, EmbeddingStore, normalize
from figqa.prompting import CANONICAL_REFUSAL

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_DIR = Path(__file__).parent / "golden"

MC_OPTIONS = (("A", "first option"), ("B", "second option"), ("C", "third option"), ("D", "fourth option"))


def make_instance(
    instance_id: str,
    image_id: str = "img-0",
    question_type: str = "binary_visual",
    figure_type: str = "line chart",
    split: str = "train",
    compound: bool = False,
    figs_numb: int = 1,
    question: str | None = None,
    gold_answer: str | None = None,
    caption: str | None = None,
    image_path: str = "",
) -> Instance:
    if question is None:
        question = f"Question for {instance_id}?"
    if gold_answer is None:
        if question_type == "unanswerable":
            gold_answer = CANONICAL_REFUSAL
        elif question_type.startswith("mc4"):
            gold_answer = "A"
        else:
            gold_answer = f"answer {instance_id}"
    options = MC_OPTIONS if question_type.startswith("mc4") else ()
    return Instance(
        instance_id=instance_id,
        image_id=image_id,
        image_path=image_path,
        question=question,
        question_type=question_type,
        figure_type=figure_type,
        compound=compound,
        figs_numb=figs_numb,
        caption=caption if caption is not None else f"Caption of {image_id}.",
        answer_options=options,
        gold_answer=gold_answer,
        split=split,
    )


def make_figure(
    image_id: str,
    figure_type: str = "line chart",
    split: str = "train",
    compound: bool = False,
    figs_numb: int = 1,
    prefix: str | None = None,
) -> list[Instance]:
    """Seven instances (one per question type) describing one figure."""
    prefix = prefix if prefix is not None else image_id
    return [
        make_instance(
            f"{prefix}-q{i}",
            image_id=image_id,
            question_type=qtype,
            figure_type=figure_type,
            split=split,
            compound=compound,
            figs_numb=figs_numb,
        )
        for i, qtype in enumerate(QUESTION_TYPES)
    ]


@pytest.fixture
def corpus14() -> Corpus:
    """2 figures x 7 question types."""
    instances = make_figure("fig-a", figure_type="line chart") + make_figure(
        "fig-b", figure_type="bar chart", compound=True, figs_numb=2
    )
    return Corpus.from_instances(instances)


E2E_CONFIGS = (
    "internvl:1s_joint_f",
    "internvl:1s_q_f",
    "internvl:0s",
    "pixtral:2s_q_f",
    "pixtral:2s_q_img_f",
)


def write_e2e_project(target_dir: Path, cache_dir: Path | None = None) -> Path:
    """Project config pointing at the committed e2e fixtures."""
    import json

    e2e = DATA_DIR / "e2e"
    config = {
        "corpus": str(e2e / "corpus.jsonl"),
        "embeddings": {
            space: str(e2e / f"embeddings_{space}.jsonl")
            for space in ("question", "image", "joint")
        },
        "backends": {
            "internvl": {"type": "mock", "script": str(e2e / "internvl_script.json")},
            "pixtral": {"type": "mock", "script": str(e2e / "pixtral_script.json")},
        },
        "cache_dir": str(cache_dir if cache_dir is not None else target_dir / "caches"),
        "decode": {"temperature": 0.0, "max_tokens": 64},
        "concurrency": 1,
    }
    path = target_dir / "project.json"
    path.write_text(json.dumps(config, indent=2), encoding="utf-8")
    return path


def unit_vector(seed: int, dim: int = 8) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return normalize(rng.normal(size=dim))


def planted_store(corpus: Corpus, spaces=("question", "image", "joint"), dim: int = 8) -> EmbeddingStore:
    """Deterministic per-instance unit vectors; image vectors shared per image."""
    store = EmbeddingStore()
    image_seeds = {}
    for idx, inst in enumerate(corpus.instances):
        if "question" in spaces:
            store.add(EmbeddingRecord(inst.instance_id, "question", unit_vector(1000 + idx, dim)))
        if "image" in spaces:
            seed = image_seeds.setdefault(inst.image_id, 2000 + len(image_seeds))
            store.add(EmbeddingRecord(inst.instance_id, "image", unit_vector(seed, dim)))
        if "joint" in spaces:
            store.add(EmbeddingRecord(inst.instance_id, "joint", unit_vector(3000 + idx, dim)))
    return store
