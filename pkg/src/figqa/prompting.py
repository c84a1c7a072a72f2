"""Chat prompt construction for figure questions.

The template lives in resources/prompt_template.json so the rendered bytes
are versioned and testable. Rendering is pure: the same instance and
selection always produce the same bundle. Few-shot examples become full
prior user/assistant turns, which keeps the format portable across chat
backends.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING, Union

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Corpus, Instance
    from .retrieval import FewShotSelection


def _load_template() -> dict:
    ref = resources.files("figqa").joinpath("resources/prompt_template.json")
    template = json.loads(ref.read_text(encoding="utf-8"))
    if template["refusal"] not in template["closing"]:
        raise RuntimeError("prompt template is inconsistent: closing must quote the refusal")
    return template


TEMPLATE = _load_template()

CANONICAL_REFUSAL = TEMPLATE["refusal"]


def canonical_refusal() -> str:
    """The exact refusal sentence the prompt instructs the model to emit."""
    return CANONICAL_REFUSAL


def is_refusal_text(text: str) -> bool:
    """Exact match after trimming; substring matches do not count."""
    return text.strip() == CANONICAL_REFUSAL


@dataclass(frozen=True)
class ImagePart:
    image_id: str
    image_path: str = ""


@dataclass(frozen=True)
class TextPart:
    text: str


Part = Union[ImagePart, TextPart]


@dataclass(frozen=True)
class Turn:
    role: str  # "user" or "assistant"
    parts: tuple[Part, ...]


@dataclass(frozen=True)
class PromptBundle:
    """System message plus ordered turns; the last turn is the query."""

    system_message: str
    turns: tuple[Turn, ...]
    query_id: str


def render_query(instance: "Instance") -> tuple[Part, ...]:
    """User-turn parts for one instance: the image plus the templated text."""
    if not instance.caption:
        raise ValueError(f"instance {instance.instance_id!r} has no caption")
    if not instance.figure_type:
        raise ValueError(f"instance {instance.instance_id!r} has no figure_type")
    t = TEMPLATE
    lines = [t["question_line"].format(question=instance.question)]
    if instance.answer_options:
        lines.append(t["answer_options_header"])
        for key, text in instance.answer_options:
            lines.append(f"{key}: {text}")
    lines.append("")
    lines.append(t["additional_info_header"])
    lines.append(t["caption_line"].format(caption=instance.caption))
    if instance.compound:
        lines.append(t["compound_line"].format(figs_numb=instance.figs_numb))
    else:
        lines.append(t["single_line"])
    lines.append(t["figure_type_line"].format(figure_type=instance.figure_type))
    lines.append("")
    lines.append(t["task_header"])
    lines.append(t["task_intro"])
    lines.append(t["task_select"] if instance.answer_options else t["task_open"])
    lines.append("")
    lines.append(t["closing"])
    lines.append(t["answer_cue"])
    return (
        ImagePart(image_id=instance.image_id, image_path=instance.image_path),
        TextPart("\n".join(lines)),
    )


def render_bundle(
    query: "Instance",
    selection: "FewShotSelection | None",
    corpus: "Corpus",
) -> PromptBundle:
    """Bundle = example user/assistant pairs (selection order) + query turn."""
    turns: list[Turn] = []
    example_ids = list(selection.example_ids) if selection is not None else []
    for example_id in example_ids:
        example = corpus[example_id]
        if not example.gold_answer:
            raise ValueError(
                f"few-shot example {example_id!r} has no gold answer to show the model"
            )
        turns.append(Turn("user", render_query(example)))
        turns.append(Turn("assistant", (TextPart(example.gold_answer),)))
    turns.append(Turn("user", render_query(query)))
    return PromptBundle(
        system_message=TEMPLATE["system"],
        turns=tuple(turns),
        query_id=query.instance_id,
    )


def render_text(bundle: PromptBundle) -> str:
    """Canonical human-readable dump, used for golden tests and debugging."""
    blocks = [f"[system]\n{bundle.system_message}"]
    for turn in bundle.turns:
        lines = []
        for part in turn.parts:
            if isinstance(part, ImagePart):
                lines.append(f"{TEMPLATE['image_label']} <image:{part.image_id}>")
            else:
                lines.append(part.text)
        blocks.append(f"[{turn.role}]\n" + "\n".join(lines))
    return "\n\n".join(blocks) + "\n"
