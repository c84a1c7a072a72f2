"""Command-line pipeline driver.

Commands communicate only through files (corpus, embedding files, caches,
plans, matrices), so long runs can be resumed and audited. Logs go to
stderr; data goes to stdout or to files named by flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from filelock import FileLock, Timeout

from . import configsearch, ensemble, metrics
from .corpus import Corpus, CorpusError, figure_type_shares, load_corpus
from .embeddings import EmbeddingStore, load_embedding_file
from .inference import (
    BackendRegistry,
    CacheSet,
    DecodeParams,
    Prediction,
    RunCache,
    RunConfig,
    cache_filename,
    make_prediction,
    run_config,
)

CONFIG_KEYS = {
    "corpus",
    "embeddings",
    "backends",
    "cache_dir",
    "plans",
    "decode",
    "concurrency",
}


class ConfigFileError(ValueError):
    pass


@dataclass
class ProjectConfig:
    """Resolved project file: every referenced input path is checked at load."""

    corpus_path: Path
    embedding_paths: dict[str, Path] = field(default_factory=dict)
    backends: dict = field(default_factory=dict)
    cache_dir: Path = Path("caches")
    plan_paths: dict[str, Path] = field(default_factory=dict)
    decode: DecodeParams = field(default_factory=DecodeParams)
    concurrency: int = 1
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path) -> "ProjectConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigFileError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"{path.name}: malformed JSON ({exc.msg})")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ConfigFileError(
                f"{path.name}: unknown keys {sorted(unknown)}; allowed: {sorted(CONFIG_KEYS)}"
            )
        if "corpus" not in raw:
            raise ConfigFileError(f"{path.name}: missing required key 'corpus'")
        base = path.parent

        def resolve(p: str, must_exist: bool = True) -> Path:
            out = Path(p)
            if not out.is_absolute():
                out = base / out
            if must_exist and not out.exists():
                raise ConfigFileError(f"{path.name}: referenced path does not exist: {out}")
            return out

        embedding_paths = {
            space: resolve(p) for space, p in raw.get("embeddings", {}).items()
        }
        plan_paths = {name: resolve(p) for name, p in raw.get("plans", {}).items()}
        backends = raw.get("backends", {})
        for name, entry in backends.items():
            if entry.get("type") == "mock":
                resolve(entry["script"])
        decode_raw = raw.get("decode", {})
        decode = DecodeParams(
            temperature=float(decode_raw.get("temperature", 0.0)),
            max_tokens=int(decode_raw.get("max_tokens", 256)),
        )
        return cls(
            corpus_path=resolve(raw["corpus"]),
            embedding_paths=embedding_paths,
            backends=backends,
            cache_dir=resolve(raw.get("cache_dir", "caches"), must_exist=False),
            plan_paths=plan_paths,
            decode=decode,
            concurrency=int(raw.get("concurrency", 1)),
            base_dir=base,
        )

    def load_corpus(self) -> Corpus:
        return load_corpus(self.corpus_path)

    def load_store(self) -> Optional[EmbeddingStore]:
        if not self.embedding_paths:
            return None
        store = EmbeddingStore()
        for space in sorted(self.embedding_paths):
            load_embedding_file(self.embedding_paths[space], store)
        return store

    def registry(self) -> BackendRegistry:
        return BackendRegistry(self.backends, base_dir=self.base_dir)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _split_ids(corpus: Corpus, split: str) -> list[str]:
    return [inst.instance_id for inst in corpus.select(split)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    project = ProjectConfig.load(args.config_file)
    corpus = load_corpus(args.corpus or project.corpus_path)
    if len(corpus) == 0:
        raise CorpusError("corpus is empty")
    qtype_counts: dict[str, int] = {}
    for inst in corpus:
        qtype_counts[inst.question_type] = qtype_counts.get(inst.question_type, 0) + 1
    shares = figure_type_shares(corpus)
    print(f"{len(corpus)} instances, {len(qtype_counts)} question types")
    for qtype in metrics.question_type_order(qtype_counts):
        print(f"  question_type {qtype}: {qtype_counts[qtype]}")
    for ftype, share in sorted(shares.items(), key=lambda kv: (-kv[1], kv[0])):
        print(f"  figure_type {ftype}: {share:.1%}")
    return 0


def cmd_run(args) -> int:
    project = ProjectConfig.load(args.config_file)
    config = RunConfig.parse(args.config)
    backend_name = args.backend or config.backend
    corpus = project.load_corpus()
    store = project.load_store()
    instance_ids = _split_ids(corpus, args.split)
    if args.limit is not None:
        instance_ids = instance_ids[: args.limit]
    if not instance_ids:
        _log(f"no instances in split {args.split!r}")
        return 1
    backend = project.registry().build(backend_name, config.config_id)
    project.cache_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(project.cache_dir / ".lock")
    lock_timeout = float(os.environ.get("FIGQA_LOCK_TIMEOUT", "10"))
    try:
        with lock.acquire(timeout=lock_timeout):
            cache = RunCache(project.cache_dir / cache_filename(config.config_id))
            cached_before = len(cache)
            report = run_config(
                corpus,
                store,
                config,
                instance_ids,
                cache,
                backend,
                decode=project.decode,
                concurrency=project.concurrency,
                force=args.force,
            )
    except Timeout:
        _log(f"cache directory {project.cache_dir} is locked by another run")
        return 1
    _log(
        f"{config.config_id}: {len(report.predictions)} predictions "
        f"({report.backend_calls} backend calls, {cached_before} cached before, "
        f"{len(report.failures)} failures)"
    )
    for failure in report.failures:
        _log(f"  failed {failure['instance_id']}: {failure['error']}")
    return 0 if report.ok else 1


def _resolve_plan(args, project: ProjectConfig):
    if args.plan == "default-confidence":
        plan = ensemble.default_confidence_plan()
    elif args.plan == "default-type-table":
        plan = ensemble.default_type_table_plan()
    else:
        plan_path = Path(args.plan)
        if not plan_path.is_absolute() and not plan_path.exists():
            named = project.plan_paths.get(args.plan)
            plan_path = named if named is not None else plan_path
        plan = ensemble.load_plan(plan_path)
    if getattr(args, "threshold", None) is not None:
        if not isinstance(plan, ensemble.ConfidencePlan):
            raise ensemble.PlanError("--threshold only applies to confidence plans")
        plan = ensemble.ConfidencePlan(
            stage1_config=plan.stage1_config,
            threshold=args.threshold,
            fallback=plan.fallback,
        )
    return plan


def cmd_ensemble(args) -> int:
    project = ProjectConfig.load(args.config_file)
    corpus = project.load_corpus()
    plan = _resolve_plan(args, project)
    caches = CacheSet(project.cache_dir)
    instance_ids = _split_ids(corpus, args.split)
    if isinstance(plan, ensemble.ConfidencePlan):
        output = ensemble.apply_confidence_plan(plan, caches, corpus, instance_ids)
    else:
        output = ensemble.apply_type_table(plan, caches, corpus, instance_ids)
    coverage = ensemble.coverage_check(output, instance_ids)
    if not coverage.ok:
        _log(f"coverage check failed: gaps={coverage.gaps} duplicates={coverage.duplicates}")
        return 1
    ensemble.write_submission(output, args.out)
    _log(f"wrote {len(output.rows)} answers to {args.out}")
    _log(f"provenance: {json.dumps(output.provenance())}")
    return 0


def _predictions_for(args, project: ProjectConfig, corpus: Corpus) -> list[Prediction]:
    instance_ids = _split_ids(corpus, args.split)
    wanted = set(instance_ids)
    if getattr(args, "submission", None):
        preds = []
        with open(args.submission, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row["instance_id"] in wanted:
                    # Submissions carry no logprobs; score text only.
                    preds.append(
                        make_prediction(row["instance_id"], "submission", row["answer"], [0.0])
                    )
        return preds
    config_id = args.config
    caches = CacheSet(project.cache_dir)
    return [caches.get(iid, config_id) for iid in instance_ids]


def cmd_evaluate(args) -> int:
    project = ProjectConfig.load(args.config_file)
    corpus = project.load_corpus()
    predictions = _predictions_for(args, project, corpus)
    if not predictions:
        _log("nothing to evaluate")
        return 1
    bertscore = metrics.load_bertscore_file(args.bertscore) if args.bertscore else None
    report = metrics.build_report(predictions, corpus, slice_by=args.slice, bertscore=bertscore)
    payload = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        _log(f"wrote report to {args.out}")
    else:
        print(payload)
    print(metrics.format_report_table(report), file=sys.stderr)
    return 0


def cmd_calibrate(args) -> int:
    project = ProjectConfig.load(args.config_file)
    corpus = project.load_corpus()
    caches = CacheSet(project.cache_dir)
    instance_ids = _split_ids(corpus, args.split)
    predictions = [caches.get(iid, args.config) for iid in instance_ids]
    edges = metrics.DEFAULT_CALIBRATION_EDGES
    if args.edges:
        edges = tuple(float(x) for x in args.edges.split(","))
    report = metrics.calibration(predictions, corpus, edges=edges)
    payload = json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        _log(f"wrote calibration report to {args.out}")
    else:
        print(payload)
    return 0


def cmd_select_config(args) -> int:
    project = ProjectConfig.load(args.config_file)
    corpus = project.load_corpus()
    if args.matrix:
        matrix = configsearch.ScoreMatrix.from_csv(args.matrix)
    else:
        if not args.configs:
            raise ConfigSearchUsage("--configs is required when scoring from caches")
        config_ids = args.configs.split(",")
        caches = CacheSet(project.cache_dir)
        instance_ids = _split_ids(corpus, args.split)
        matrix = configsearch.score_matrix_from_caches(corpus, caches, config_ids, instance_ids)
    plan, diagnostics = configsearch.build_type_table(
        matrix,
        corpus,
        others_threshold=args.others_threshold,
        split_type=args.split_type,
        min_repeats=args.min_repeats,
        k=args.folds,
        base_seed=args.seed,
        max_repeats=args.max_repeats,
    )
    ensemble.save_plan(plan, args.out)
    _log(f"wrote type-table plan to {args.out}")
    if args.diagnostics:
        payload = {name: diag.to_json_dict() for name, diag in diagnostics.items()}
        Path(args.diagnostics).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        _log(f"wrote diagnostics to {args.diagnostics}")
    return 0


class ConfigSearchUsage(ValueError):
    pass


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config-file", required=True, help="project config JSON")

    p = sub.add_parser("ingest", help="validate a corpus and print its distribution")
    common(p)
    p.add_argument("--corpus", help="override the project corpus path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="execute one configuration over a split")
    common(p)
    p.add_argument("--config", required=True, help="config id, e.g. pixtral:2s_q_f")
    p.add_argument("--backend", help="override the backend registry entry to use")
    p.add_argument("--split", default="dev", help="train|validation|test|dev|all")
    p.add_argument("--limit", type=int, help="only the first N instances")
    p.add_argument("--force", action="store_true", help="re-run cached pairs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ensemble", help="apply a routing plan and write a submission")
    common(p)
    p.add_argument(
        "--plan",
        required=True,
        help="plan file, or default-confidence / default-type-table",
    )
    p.add_argument("--split", default="dev")
    p.add_argument("--out", required=True, help="submission JSONL path")
    p.add_argument("--threshold", type=float, help="override a confidence plan's threshold")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="score cached predictions or a submission")
    common(p)
    p.add_argument("--config", help="config id to read from the cache")
    p.add_argument("--submission", help="submission JSONL to score instead of a cache")
    p.add_argument("--split", default="dev")
    p.add_argument("--slice", default="question_type", choices=metrics.SLICE_MODES)
    p.add_argument("--bertscore", help="optional external score file to merge")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="confidence-bin report for one configuration")
    common(p)
    p.add_argument("--config", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--edges", help="comma-separated bin edges")
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("select-config", help="build a type-table plan from scores")
    common(p)
    p.add_argument("--matrix", help="score matrix CSV (instance_id,<config ids...>)")
    p.add_argument("--configs", help="config ids to score from caches (comma-separated)")
    p.add_argument("--split", default="dev")
    p.add_argument("--out", required=True, help="plan JSON output path")
    p.add_argument("--diagnostics", help="optional diagnostics JSON output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=configsearch.DEFAULT_FOLDS)
    p.add_argument("--min-repeats", type=int, default=configsearch.DEFAULT_MIN_REPEATS)
    p.add_argument("--max-repeats", type=int, default=configsearch.DEFAULT_MAX_REPEATS)
    p.add_argument("--others-threshold", type=float, default=configsearch.DEFAULT_OTHERS_THRESHOLD)
    p.add_argument("--split-type", help="figure type to split by question type")
    p.set_defaults(func=cmd_select_config)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and not (args.config or args.submission):
        parser.error("evaluate needs --config or --submission")
    try:
        return args.func(args)
    except (
        ConfigFileError,
        ConfigSearchUsage,
        CorpusError,
        ensemble.PlanError,
        configsearch.ConfigSearchError,
        ValueError,
        KeyError,
        RuntimeError,
    ) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
