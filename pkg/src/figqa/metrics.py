"""Answer-quality metrics: ROUGE-1 / ROUGE-L triples, sliced aggregation,
refusal precision, and confidence calibration.

Conventions (pinned, see README):
  * tokenization lowercases and splits on any non-alphanumeric character,
    no stemming;
  * if candidate and reference both tokenize to nothing the pair scores
    (1, 1, 1), if exactly one side is empty it scores (0, 0, 0);
  * calibration bins are lower-inclusive, the last bin is closed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .corpus import QUESTION_TYPES, Corpus
from .prompting import is_refusal_text

if TYPE_CHECKING:  # pragma: no cover
    from .inference import Prediction

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

DEFAULT_CALIBRATION_EDGES = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

SLICE_MODES = ("none", "question_type", "figure_type", "both")


@dataclass(frozen=True)
class ScoreTriple:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "ScoreTriple":
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision, recall, f1)


@dataclass(frozen=True)
class CalibrationBin:
    lower: float
    upper: float
    mean_score: float | None  # None for an empty bin
    fraction: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[CalibrationBin, ...]
    below_count: int
    below_fraction: float
    total: int

    def to_json_dict(self) -> dict:
        return {
            "bins": [
                {
                    "lower": b.lower,
                    "upper": b.upper,
                    "mean_score": b.mean_score,
                    "fraction": b.fraction,
                    "count": b.count,
                }
                for b in self.bins
            ],
            "below_count": self.below_count,
            "below_fraction": self.below_fraction,
            "total": self.total,
        }


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties."""
    return _TOKEN_RE.findall(text.lower())


def _to_ids(cand: Sequence[str], ref: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    vocab: dict[str, int] = {}
    for tok in cand:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    for tok in ref:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    a = np.array([vocab[t] for t in cand], dtype=np.int64)
    b = np.array([vocab[t] for t in ref], dtype=np.int64)
    return a, b


def _empty_sides(cand_tokens: Sequence[str], ref_tokens: Sequence[str]) -> ScoreTriple | None:
    if not cand_tokens and not ref_tokens:
        return ScoreTriple(1.0, 1.0, 1.0)
    if not cand_tokens or not ref_tokens:
        return ScoreTriple(0.0, 0.0, 0.0)
    return None


def rouge1(candidate: str, reference: str) -> ScoreTriple:
    """Unigram ROUGE: clipped multiset overlap over tokens."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    edge = _empty_sides(cand, ref)
    if edge is not None:
        return edge
    a, b = _to_ids(cand, ref)
    overlap = _kernels.clipped_overlap(np.sort(a), np.sort(b))
    return ScoreTriple.from_pr(overlap / len(cand), overlap / len(ref))


def rougeL(candidate: str, reference: str) -> ScoreTriple:
    """Longest-common-subsequence ROUGE over token sequences."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    edge = _empty_sides(cand, ref)
    if edge is not None:
        return edge
    a, b = _to_ids(cand, ref)
    lcs = _kernels.lcs_len(a, b)
    return ScoreTriple.from_pr(lcs / len(cand), lcs / len(ref))


def _mean_triples(triples: Sequence[ScoreTriple]) -> ScoreTriple:
    n = len(triples)
    return ScoreTriple(
        sum(t.precision for t in triples) / n,
        sum(t.recall for t in triples) / n,
        sum(t.f1 for t in triples) / n,
    )


def _slice_key(instance, slice_by: str):
    if slice_by == "none":
        return "all"
    if slice_by == "question_type":
        return instance.question_type
    if slice_by == "figure_type":
        return instance.figure_type
    if slice_by == "both":
        return (instance.figure_type, instance.question_type)
    raise ValueError(f"slice_by must be one of {SLICE_MODES}, got {slice_by!r}")


def _require_gold(corpus: Corpus, instance_id: str):
    instance = corpus.get(instance_id)
    if instance is None:
        raise KeyError(f"prediction references unknown instance {instance_id!r}")
    if not instance.gold_answer:
        raise ValueError(f"instance {instance_id!r} has no gold answer; cannot score")
    return instance


def aggregate(
    predictions: Iterable["Prediction"],
    corpus: Corpus,
    slice_by: str = "none",
) -> dict:
    """Unweighted per-slice means of ROUGE-1 and ROUGE-L triples.

    Returns a map slice key -> {"count", "rouge1", "rougeL"}; slices with no
    instances simply do not appear.
    """
    if slice_by not in SLICE_MODES:
        raise ValueError(f"slice_by must be one of {SLICE_MODES}, got {slice_by!r}")
    buckets: dict[object, list[tuple[ScoreTriple, ScoreTriple]]] = {}
    for pred in predictions:
        instance = _require_gold(corpus, pred.instance_id)
        pair = (
            rouge1(pred.answer_text, instance.gold_answer),
            rougeL(pred.answer_text, instance.gold_answer),
        )
        buckets.setdefault(_slice_key(instance, slice_by), []).append(pair)
    out = {}
    for key in sorted(buckets, key=str):
        pairs = buckets[key]
        out[key] = {
            "count": len(pairs),
            "rouge1": _mean_triples([p[0] for p in pairs]),
            "rougeL": _mean_triples([p[1] for p in pairs]),
        }
    return out


def unanswerable_precision(predictions: Iterable["Prediction"], corpus: Corpus) -> float:
    """Of the predictions that refuse, the fraction whose instance truly is
    unanswerable. Undefined (raises) when nothing refused."""
    refused = 0
    correct = 0
    for pred in predictions:
        if not is_refusal_text(pred.answer_text):
            continue
        instance = corpus.get(pred.instance_id)
        if instance is None:
            raise KeyError(f"prediction references unknown instance {pred.instance_id!r}")
        refused += 1
        if instance.question_type == "unanswerable":
            correct += 1
    if refused == 0:
        raise ValueError("no refusal predictions; unanswerable precision is undefined")
    return correct / refused


def calibration(
    predictions: Sequence["Prediction"],
    corpus: Corpus,
    edges: Sequence[float] = DEFAULT_CALIBRATION_EDGES,
) -> CalibrationReport:
    """Bin predictions by confidence and report mean ROUGE-1 F1 per bin.

    Bins are [lower, upper) except the last, which is closed. Fractions are
    over all predictions; those below the lowest edge are reported separately.
    """
    edges = list(edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"calibration edges must be strictly increasing, got {edges}")
    total = len(predictions)
    scores: list[list[float]] = [[] for _ in range(len(edges) - 1)]
    below = 0
    for pred in predictions:
        instance = _require_gold(corpus, pred.instance_id)
        conf = pred.confidence
        if conf < edges[0]:
            below += 1
            continue
        if conf >= edges[-1]:
            idx = len(edges) - 2
        else:
            idx = int(np.searchsorted(edges, conf, side="right")) - 1
        scores[idx].append(rouge1(pred.answer_text, instance.gold_answer).f1)
    bins = []
    for i, bucket in enumerate(scores):
        mean = sum(bucket) / len(bucket) if bucket else None
        fraction = len(bucket) / total if total else 0.0
        bins.append(CalibrationBin(edges[i], edges[i + 1], mean, fraction, len(bucket)))
    return CalibrationReport(
        bins=tuple(bins),
        below_count=below,
        below_fraction=below / total if total else 0.0,
        total=total,
    )


def load_bertscore_file(path) -> dict[str, float]:
    """External per-instance scores, {"instance_id": score}; computed elsewhere."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object mapping instance_id to score")
    return {str(k): float(v) for k, v in raw.items()}


def build_report(
    predictions: Sequence["Prediction"],
    corpus: Corpus,
    slice_by: str = "question_type",
    bertscore: Mapping[str, float] | None = None,
) -> dict:
    """JSON-ready evaluation report; merges optional external scores per slice."""
    sliced = aggregate(predictions, corpus, slice_by)
    report: dict = {"slice_by": slice_by, "slices": {}}
    extras: dict[object, list[float]] = {}
    if bertscore is not None:
        for pred in predictions:
            instance = corpus.get(pred.instance_id)
            if instance is not None and pred.instance_id in bertscore:
                extras.setdefault(_slice_key(instance, slice_by), []).append(
                    bertscore[pred.instance_id]
                )
    for key, stats in sliced.items():
        name = "|".join(key) if isinstance(key, tuple) else str(key)
        entry = {
            "count": stats["count"],
            "rouge1": vars(stats["rouge1"]),
            "rougeL": vars(stats["rougeL"]),
        }
        if key in extras:
            entry["bertscore"] = sum(extras[key]) / len(extras[key])
        report["slices"][name] = entry
    return report


def format_report_table(report: dict) -> str:
    """Aligned plain-text rendering of a build_report() result."""
    headers = ["slice", "n", "R1-P", "R1-R", "R1-F1", "RL-P", "RL-R", "RL-F1"]
    has_bs = any("bertscore" in s for s in report["slices"].values())
    if has_bs:
        headers.append("BS")
    rows = []
    for name, entry in report["slices"].items():
        row = [name, str(entry["count"])]
        for metric in ("rouge1", "rougeL"):
            for field in ("precision", "recall", "f1"):
                row.append(f"{entry[metric][field]:.4f}")
        if has_bs:
            row.append(f"{entry['bertscore']:.4f}" if "bertscore" in entry else "-")
        rows.append(row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def question_type_order(keys: Iterable[str]) -> list[str]:
    """Stable display order: canonical question types first, extras afterwards."""
    canonical = [q for q in QUESTION_TYPES if q in set(keys)]
    rest = sorted(set(keys) - set(canonical))
    return canonical + rest
