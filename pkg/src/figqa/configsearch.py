"""Cross-validation-style selection of the best configuration per data group.

Groups: figure types below a share threshold merge into "others"; the largest
figure type is additionally split into one group per question type; every
other figure type forms its own group. Within a group, instances are
repeatedly split into seeded random folds; each configuration's per-fold mean
score has the fold's best mean subtracted, and the configuration with the
highest mean of these (non-positive) deltas wins. Repeats continue past the
minimum until the winner stays put, up to a cap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import QUESTION_TYPES, Corpus
from .ensemble import TypeTablePlan

DEFAULT_OTHERS_THRESHOLD = 0.02
DEFAULT_FOLDS = 5
DEFAULT_MIN_REPEATS = 10
DEFAULT_STABLE_RUN = 3
DEFAULT_MAX_REPEATS = 50

OTHERS_GROUP = "others"
SPLIT_GROUP_SEP = "::"


class ConfigSearchError(ValueError):
    pass


class ScoreMatrix:
    """Dense (instance x config) score table, values in [0, 1]."""

    def __init__(self, instance_ids: Sequence[str], config_ids: Sequence[str], values) -> None:
        self.instance_ids = list(instance_ids)
        self.config_ids = list(config_ids)
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != (len(self.instance_ids), len(self.config_ids)):
            raise ConfigSearchError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.instance_ids)} instances x {len(self.config_ids)} configs"
            )
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise ConfigSearchError("duplicate instance ids in score matrix")
        if len(set(self.config_ids)) != len(self.config_ids):
            raise ConfigSearchError("duplicate config ids in score matrix")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ConfigSearchError("scores must lie in [0, 1]")
        if np.isnan(self.values).any():
            raise ConfigSearchError("score matrix has missing (NaN) cells; it must be dense")
        self._row = {iid: i for i, iid in enumerate(self.instance_ids)}

    def rows_for(self, instance_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._row[iid] for iid in instance_ids], dtype=np.intp)
        except KeyError as exc:
            raise ConfigSearchError(f"score matrix has no row for instance {exc.args[0]!r}")

    @classmethod
    def from_csv(cls, path) -> "ScoreMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigSearchError(f"{Path(path).name}: empty score matrix file")
            if len(header) < 2 or header[0] != "instance_id":
                raise ConfigSearchError(
                    f"{Path(path).name}: header must be instance_id,<config ids...>"
                )
            config_ids = header[1:]
            ids, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ConfigSearchError(
                        f"{Path(path).name}:{lineno}: expected {len(header)} cells, got {len(row)}"
                    )
                ids.append(row[0])
                try:
                    rows.append([float(x) for x in row[1:]])
                except ValueError as exc:
                    raise ConfigSearchError(f"{Path(path).name}:{lineno}: {exc}") from exc
        return cls(ids, config_ids, np.array(rows, dtype=np.float64))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["instance_id", *self.config_ids])
            for iid, row in zip(self.instance_ids, self.values):
                writer.writerow([iid, *(repr(float(x)) for x in row)])


def score_matrix_from_caches(
    corpus: Corpus,
    caches,
    config_ids: Sequence[str],
    instance_ids: Sequence[str],
) -> ScoreMatrix:
    """ROUGE-1 F1 per (instance, config) from cached predictions."""
    from .metrics import rouge1

    values = np.zeros((len(instance_ids), len(config_ids)), dtype=np.float64)
    for i, iid in enumerate(instance_ids):
        gold = corpus[iid].gold_answer
        if not gold:
            raise ConfigSearchError(f"instance {iid!r} has no gold answer to score against")
        for j, cid in enumerate(config_ids):
            values[i, j] = rouge1(caches.get(iid, cid).answer_text, gold).f1
    return ScoreMatrix(instance_ids, config_ids, values)


# ---------------------------------------------------------------------------
# Grouping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupingPlan:
    groups: dict[str, tuple[str, ...]]
    others_threshold: float
    split_type: str

    def group_names(self) -> list[str]:
        return sorted(self.groups)


def build_groups(
    corpus: Corpus,
    others_threshold: float = DEFAULT_OTHERS_THRESHOLD,
    split_type: Optional[str] = None,
) -> GroupingPlan:
    """Partition the dev pool by figure type (plus a question-type split of
    the largest type). Types with share strictly below the threshold merge
    into "others"."""
    dev = corpus.select("dev")
    if not dev:
        raise ConfigSearchError("cannot build groups: dev pool is empty")
    counts: dict[str, int] = {}
    for inst in dev:
        counts[inst.figure_type] = counts.get(inst.figure_type, 0) + 1
    total = len(dev)
    if split_type is None:
        # Largest share, ties by name for determinism.
        split_type = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
    elif split_type not in counts:
        raise ConfigSearchError(f"split_type {split_type!r} does not occur in the dev pool")
    merged = {
        ft for ft, n in counts.items() if n / total < others_threshold and ft != split_type
    }
    groups: dict[str, list[str]] = {}
    for inst in dev:
        ft = inst.figure_type
        if ft == split_type:
            name = f"{split_type}{SPLIT_GROUP_SEP}{inst.question_type}"
        elif ft in merged:
            name = OTHERS_GROUP
        else:
            name = ft
        groups.setdefault(name, []).append(inst.instance_id)
    return GroupingPlan(
        groups={name: tuple(ids) for name, ids in groups.items()},
        others_threshold=others_threshold,
        split_type=split_type,
    )


# ---------------------------------------------------------------------------
# Fold scoring and selection
# ---------------------------------------------------------------------------

def fold_partition(instance_ids: Sequence[str], k: int, seed) -> list[list[str]]:
    """Seeded uniform random partition into k near-equal folds.

    Groups smaller than k are scored as a single fold (degenerate case).
    """
    ids = list(instance_ids)
    if len(ids) < k:
        return [ids]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    return [[ids[i] for i in chunk] for chunk in np.array_split(perm, k)]


def fold_scores(
    matrix: ScoreMatrix,
    group_ids: Sequence[str],
    k: int = DEFAULT_FOLDS,
    seed=0,
) -> list[dict[str, float]]:
    """Per-fold, per-config mean score over one seeded partition."""
    means = []
    for fold in fold_partition(group_ids, k, seed):
        rows = matrix.rows_for(fold)
        fold_mean = matrix.values[rows].mean(axis=0)
        means.append({cid: float(m) for cid, m in zip(matrix.config_ids, fold_mean)})
    return means


@dataclass
class SelectionDiagnostics:
    winner: str
    scores: dict[str, float]
    repeats: int
    k: int
    base_seed: int
    winner_history: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "winner": self.winner,
            "scores": dict(sorted(self.scores.items())),
            "repeats": self.repeats,
            "k": self.k,
            "base_seed": self.base_seed,
            "winner_history": list(self.winner_history),
        }


def select_best(
    matrix: ScoreMatrix,
    group_ids: Sequence[str],
    min_repeats: int = DEFAULT_MIN_REPEATS,
    k: int = DEFAULT_FOLDS,
    base_seed: int = 0,
    stable_run: int = DEFAULT_STABLE_RUN,
    max_repeats: int = DEFAULT_MAX_REPEATS,
) -> SelectionDiagnostics:
    """Pick the config with the highest mean fold-max-subtracted score.

    Scores are <= 0 by construction (0 only for a config that tops every
    fold). Repeat r uses seed sequence [base_seed, r]; repeats stop once the
    cumulative winner is unchanged for stable_run consecutive repeats after
    the minimum, or at the cap. Ties break to the lexicographically smallest
    config id.
    """
    if not matrix.config_ids:
        raise ConfigSearchError("score matrix has no configurations to select from")
    if not group_ids:
        raise ConfigSearchError("cannot select a configuration for an empty group")
    sums = {cid: 0.0 for cid in matrix.config_ids}
    fold_count = 0
    history: list[str] = []
    repeats_used = 0
    for repeat in range(max_repeats):
        repeats_used = repeat + 1
        for fold_mean in fold_scores(matrix, group_ids, k=k, seed=[base_seed, repeat]):
            best = max(fold_mean.values())
            for cid, mean in fold_mean.items():
                sums[cid] += mean - best
            fold_count += 1
        scores = {cid: total / fold_count for cid, total in sums.items()}
        winner = min(scores, key=lambda cid: (-scores[cid], cid))
        history.append(winner)
        if repeats_used >= min_repeats and len(set(history[-stable_run:])) == 1 and len(
            history
        ) >= stable_run:
            break
    scores = {cid: total / fold_count for cid, total in sums.items()}
    return SelectionDiagnostics(
        winner=history[-1],
        scores=scores,
        repeats=repeats_used,
        k=k,
        base_seed=base_seed,
        winner_history=history,
    )


def build_type_table(
    matrix: ScoreMatrix,
    corpus: Corpus,
    others_threshold: float = DEFAULT_OTHERS_THRESHOLD,
    split_type: Optional[str] = None,
    min_repeats: int = DEFAULT_MIN_REPEATS,
    k: int = DEFAULT_FOLDS,
    base_seed: int = 0,
    stable_run: int = DEFAULT_STABLE_RUN,
    max_repeats: int = DEFAULT_MAX_REPEATS,
) -> tuple[TypeTablePlan, dict[str, SelectionDiagnostics]]:
    """Run select_best per group and assemble the routing table.

    Split groups fill their question-type cell; every other group's winner is
    replicated across all seven question types of its row.
    """
    grouping = build_groups(corpus, others_threshold=others_threshold, split_type=split_type)
    table: dict[str, dict[str, str]] = {}
    diagnostics: dict[str, SelectionDiagnostics] = {}

    def select_for(name: str, ids: Sequence[str]) -> str:
        diag = select_best(
            matrix,
            ids,
            min_repeats=min_repeats,
            k=k,
            base_seed=base_seed,
            stable_run=stable_run,
            max_repeats=max_repeats,
        )
        diagnostics[name] = diag
        return diag.winner

    for name in sorted(grouping.groups):
        ids = grouping.groups[name]
        winner = select_for(name, ids)
        if SPLIT_GROUP_SEP in name:
            figure_type, question_type = name.split(SPLIT_GROUP_SEP, 1)
            table.setdefault(figure_type, {})[question_type] = winner
        else:
            table[name] = {q: winner for q in QUESTION_TYPES}
    # Question types absent from the split figure type still need a route for
    # the plan to be total: borrow the row's most common winner.
    split_row = table.setdefault(grouping.split_type, {})
    for q in QUESTION_TYPES:
        if q not in split_row:
            split_row[q] = _fill_from_row(split_row, matrix)
    if OTHERS_GROUP not in table:
        # No figure type fell below the threshold; route unseen types by the
        # overall winner so the plan stays total.
        overall = select_for(OTHERS_GROUP, matrix.instance_ids)
        table[OTHERS_GROUP] = {q: overall for q in QUESTION_TYPES}
    plan = TypeTablePlan(table=table, default_group=OTHERS_GROUP)
    plan.validate()
    return plan, diagnostics


def _fill_from_row(row: dict[str, str], matrix: ScoreMatrix) -> str:
    if row:
        winners = sorted(row.values())
        return max(set(winners), key=lambda w: (winners.count(w), w))
    return sorted(matrix.config_ids)[0]
