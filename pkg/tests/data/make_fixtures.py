#!/usr/bin/env python3
"""Regenerate the committed end-to-end fixtures (corpus, embeddings, mock
scripts). Fully deterministic; run from the repo root:

    python3 tests/data/make_fixtures.py
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from figqa.corpus import QUESTION_TYPES, Corpus, dump_corpus, Instance
from figqa.embeddings import EmbeddingRecord, normalize, write_embedding_file
from figqa.prompting import CANONICAL_REFUSAL

HERE = Path(__file__).parent
E2E = HERE / "e2e"

MC_OPTIONS = [
    {"key": "A", "text": "the red series"},
    {"key": "B", "text": "the blue series"},
    {"key": "C", "text": "the green series"},
    {"key": "D", "text": "the black series"},
]

FIGURES = [
    # (image_id, figure_type, split, compound, figs_numb)
    ("lc1", "line chart", "train", False, 1),
    ("lc2", "line chart", "train", True, 2),
    ("lc3", "line chart", "train", False, 1),
    ("lc4", "line chart", "train", False, 1),
    ("lc5", "line chart", "train", True, 3),
    ("bar1", "bar chart", "train", True, 3),
    ("sc1", "scatter plot", "train", False, 1),
    ("tr1", "tree", "train", False, 1),
    ("lc6", "line chart", "validation", False, 1),
    ("bar2", "bar chart", "validation", False, 1),
]

CONFIG_IDS = [
    "internvl:1s_joint_f",
    "internvl:1s_q_f",
    "internvl:0s",
    "pixtral:2s_q_f",
    "pixtral:2s_q_img_f",
]

# Confidence rotation: spans every default calibration bin plus below-range.
CONFIDENCES = [1.0, 0.95, 0.92, 0.85, 0.75, 0.65, 0.55, 0.45, 0.35, 0.25]

GOLD_OPEN = [
    "the accuracy increases steadily",
    "0.85",
    "the blue series",
    "about 40 percent",
    "it peaks at epoch twenty",
]


def build_corpus() -> Corpus:
    instances = []
    for fig_index, (image_id, figure_type, split, compound, figs_numb) in enumerate(FIGURES):
        for q_index, qtype in enumerate(QUESTION_TYPES):
            iid = f"{image_id}-q{q_index}"
            if qtype == "unanswerable":
                gold = CANONICAL_REFUSAL
                question = f"What hardware produced figure {image_id}?"
                options = []
            elif qtype.startswith("mc4"):
                gold = ["A", "B", "A,C", "D"][(fig_index + q_index) % 4]
                question = f"Which series dominates in figure {image_id}?"
                options = MC_OPTIONS
            elif qtype.startswith("binary"):
                gold = ["Yes", "No"][(fig_index + q_index) % 2]
                question = f"Does figure {image_id} show an upward trend?"
                options = []
            else:
                gold = GOLD_OPEN[(fig_index + q_index) % len(GOLD_OPEN)]
                question = f"What is the final value shown in figure {image_id}?"
                options = []
            instances.append(
                Instance(
                    instance_id=iid,
                    image_id=image_id,
                    image_path=f"images/{image_id}.png",
                    question=question,
                    question_type=qtype,
                    figure_type=figure_type,
                    compound=compound,
                    figs_numb=figs_numb,
                    caption=f"Results shown in figure {image_id}.",
                    answer_options=tuple((o["key"], o["text"]) for o in options),
                    gold_answer=gold,
                    split=split,
                )
            )
    return Corpus.from_instances(instances)


def write_embeddings(corpus: Corpus) -> None:
    dim = 16
    image_seed = {}
    for space, offset in (("question", 10_000), ("image", 20_000), ("joint", 30_000)):
        records = []
        for index, inst in enumerate(corpus.instances):
            if space == "image":
                seed = image_seed.setdefault(inst.image_id, offset + len(image_seed))
            else:
                seed = offset + index
            rng = np.random.default_rng(seed)
            records.append(
                EmbeddingRecord(inst.instance_id, space, normalize(rng.normal(size=dim)))
            )
        write_embedding_file(records, E2E / f"embeddings_{space}.jsonl")


def scripted_entry(inst: Instance, config_index: int, index: int) -> dict:
    conf = CONFIDENCES[(index + 3 * config_index) % len(CONFIDENCES)]
    correct = conf >= 0.9 or (index + config_index) % 3 == 0
    if inst.question_type == "unanswerable":
        answer = CANONICAL_REFUSAL if correct else "the gpu count is eight"
    elif correct:
        answer = inst.gold_answer
    elif (index + config_index) % 3 == 1:
        answer = "a completely different reading"
    else:
        answer = inst.gold_answer.split(" ")[0]  # partial credit
    logprob = 0.0 if conf >= 1.0 else math.log(conf)
    return {"answer": answer, "token_logprobs": [logprob]}


def write_scripts(corpus: Corpus) -> None:
    for backend in ("internvl", "pixtral"):
        configs = {}
        for config_index, config_id in enumerate(CONFIG_IDS):
            if not config_id.startswith(backend + ":"):
                continue
            configs[config_id] = {
                inst.instance_id: scripted_entry(inst, config_index, index)
                for index, inst in enumerate(corpus.instances)
            }
        path = E2E / f"{backend}_script.json"
        path.write_text(json.dumps({"configs": configs}, indent=1, sort_keys=True) + "\n")


def main() -> None:
    E2E.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus()
    dump_corpus(corpus, E2E / "corpus.jsonl")
    write_embeddings(corpus)
    write_scripts(corpus)
    print(f"wrote {len(corpus)} instances and fixtures under {E2E}")


if __name__ == "__main__":
    main()
