"""Routing cached predictions into one final answer per instance.

Two plan kinds, both plain data editable without code changes:
  * confidence plan: keep stage-1 answers at or above a confidence
    threshold, route the rest by question type;
  * type-table plan: route every instance by (figure-type group,
    question type).
Plans only read caches; they never call a backend, so ensembling is
replayable from files alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

from .corpus import QUESTION_TYPES, Corpus
from .inference import CacheSet

STAGE_ONE = "stage1"
STAGE_FALLBACK = "fallback"
STAGE_TABLE = "table"


class PlanError(ValueError):
    """Plan file is malformed or not total."""


@dataclass(frozen=True)
class ConfidencePlan:
    stage1_config: str
    threshold: float  # meaningful range (0, 1]; comparison is inclusive (>=)
    fallback: dict[str, str]

    def validate(self) -> None:
        missing = [q for q in QUESTION_TYPES if q not in self.fallback]
        if missing:
            raise PlanError(f"confidence plan fallback is missing question types {missing}")

    def configs(self) -> list[str]:
        return sorted({self.stage1_config, *self.fallback.values()})


@dataclass(frozen=True)
class TypeTablePlan:
    table: dict[str, dict[str, str]]
    default_group: str = "others"

    def validate(self) -> None:
        if self.default_group not in self.table:
            raise PlanError(
                f"type table has no row for its default group {self.default_group!r}"
            )
        for group, row in self.table.items():
            missing = [q for q in QUESTION_TYPES if q not in row]
            if missing:
                raise PlanError(f"type table row {group!r} is missing question types {missing}")

    def configs(self) -> list[str]:
        return sorted({cfg for row in self.table.values() for cfg in row.values()})

    def group_for(self, figure_type: str) -> str:
        return figure_type if figure_type in self.table else self.default_group


Plan = Union[ConfidencePlan, TypeTablePlan]


@dataclass(frozen=True)
class AnswerRow:
    instance_id: str
    answer_text: str
    source_config: str
    stage: str


@dataclass
class EnsembleOutput:
    rows: list[AnswerRow]

    @property
    def answers(self) -> dict[str, AnswerRow]:
        return {row.instance_id: row for row in self.rows}

    def provenance(self) -> dict:
        by_config: dict[str, int] = {}
        by_stage: dict[str, int] = {}
        for row in self.rows:
            by_config[row.source_config] = by_config.get(row.source_config, 0) + 1
            by_stage[row.stage] = by_stage.get(row.stage, 0) + 1
        return {"by_config": dict(sorted(by_config.items())), "by_stage": dict(sorted(by_stage.items()))}


@dataclass(frozen=True)
class CoverageReport:
    gaps: tuple[str, ...]
    duplicates: tuple[str, ...]
    extras: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not (self.gaps or self.duplicates or self.extras)


def apply_confidence_plan(
    plan: ConfidencePlan,
    caches: CacheSet,
    corpus: Corpus,
    instance_ids: Sequence[str],
) -> EnsembleOutput:
    """Stage-1 answer when its confidence >= threshold, else the question
    type's fallback config. Missing cache entries abort with the pair named."""
    plan.validate()
    rows = []
    for instance_id in instance_ids:
        instance = corpus[instance_id]
        stage1 = caches.get(instance_id, plan.stage1_config)
        if stage1.confidence >= plan.threshold:
            rows.append(
                AnswerRow(instance_id, stage1.answer_text, plan.stage1_config, STAGE_ONE)
            )
            continue
        fallback_config = plan.fallback[instance.question_type]
        fallback = caches.get(instance_id, fallback_config)
        rows.append(
            AnswerRow(instance_id, fallback.answer_text, fallback_config, STAGE_FALLBACK)
        )
    return EnsembleOutput(rows)


def apply_type_table(
    plan: TypeTablePlan,
    caches: CacheSet,
    corpus: Corpus,
    instance_ids: Sequence[str],
) -> EnsembleOutput:
    """Answer every instance from table[(group(figure_type), question_type)]."""
    plan.validate()
    rows = []
    for instance_id in instance_ids:
        instance = corpus[instance_id]
        group = plan.group_for(instance.figure_type)
        row = plan.table[group]
        config_id = row.get(instance.question_type)
        if config_id is None:
            raise PlanError(
                f"type table row {group!r} has no entry for {instance.question_type!r}"
            )
        pred = caches.get(instance_id, config_id)
        rows.append(AnswerRow(instance_id, pred.answer_text, config_id, STAGE_TABLE))
    return EnsembleOutput(rows)


def coverage_check(
    output: Union[EnsembleOutput, Sequence[AnswerRow]],
    instance_ids: Sequence[str],
) -> CoverageReport:
    """Report-only bijection check between requested instances and answers."""
    rows = output.rows if isinstance(output, EnsembleOutput) else list(output)
    wanted = set(instance_ids)
    seen: set[str] = set()
    duplicates = []
    extras = []
    for row in rows:
        if row.instance_id in seen:
            duplicates.append(row.instance_id)
        seen.add(row.instance_id)
        if row.instance_id not in wanted:
            extras.append(row.instance_id)
    gaps = [iid for iid in instance_ids if iid not in seen]
    return CoverageReport(tuple(gaps), tuple(duplicates), tuple(extras))


# ---------------------------------------------------------------------------
# Plan files and submission export
# ---------------------------------------------------------------------------

def plan_from_dict(raw: dict) -> Plan:
    kind = raw.get("kind")
    if kind == "confidence":
        plan = ConfidencePlan(
            stage1_config=str(raw["stage1_config"]),
            threshold=float(raw["threshold"]),
            fallback={str(k): str(v) for k, v in raw["fallback"].items()},
        )
    elif kind == "type_table":
        plan = TypeTablePlan(
            table={
                str(group): {str(q): str(c) for q, c in row.items()}
                for group, row in raw["table"].items()
            },
            default_group=str(raw.get("default_group", "others")),
        )
    else:
        raise PlanError(f"plan kind must be 'confidence' or 'type_table', got {kind!r}")
    plan.validate()
    return plan


def plan_to_dict(plan: Plan) -> dict:
    if isinstance(plan, ConfidencePlan):
        return {
            "kind": "confidence",
            "stage1_config": plan.stage1_config,
            "threshold": plan.threshold,
            "fallback": dict(sorted(plan.fallback.items())),
        }
    return {
        "kind": "type_table",
        "default_group": plan.default_group,
        "table": {g: dict(sorted(row.items())) for g, row in sorted(plan.table.items())},
    }


def load_plan(path) -> Plan:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PlanError(f"{Path(path).name}: malformed JSON ({exc.msg})") from exc
    return plan_from_dict(raw)


def save_plan(plan: Plan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_default(name: str) -> Plan:
    ref = resources.files("figqa").joinpath(f"resources/plans/{name}")
    return plan_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def default_confidence_plan() -> ConfidencePlan:
    plan = _load_default("confidence_default.json")
    assert isinstance(plan, ConfidencePlan)
    return plan


def default_type_table_plan() -> TypeTablePlan:
    plan = _load_default("type_table_default.json")
    assert isinstance(plan, TypeTablePlan)
    return plan


def write_submission(output: EnsembleOutput, path) -> None:
    """Shared-task-style upload file: one {"instance_id", "answer"} per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in output.rows:
            fh.write(
                json.dumps(
                    {"instance_id": row.instance_id, "answer": row.answer_text},
                    ensure_ascii=False,
                )
                + "\n"
            )
