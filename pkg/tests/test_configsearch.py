from __future__ import annotations

import numpy as np
import pytest

from conftest import make_figure, make_instance
from figqa.configsearch import (
    ConfigSearchError,
    ScoreMatrix,
    build_groups,
    build_type_table,
    fold_partition,
    fold_scores,
    select_best,
)
from figqa.corpus import QUESTION_TYPES, Corpus

PAPER_LIKE_FIGURE_COUNTS = {
    "line chart": 65,
    "tree": 5,
    "scatter plot": 5,
    "pie chart": 4,
    "bar chart": 4,
    "architecture diagram": 4,
    "neural networks": 4,
    "confusion matrix": 3,
    "graph": 3,
    "violin plot": 1,
    "venn diagram": 1,
    "box plot": 1,
}


def paper_like_corpus() -> Corpus:
    instances = []
    n = 0
    for figure_type, count in PAPER_LIKE_FIGURE_COUNTS.items():
        for _ in range(count):
            instances.extend(make_figure(f"im{n:03d}", figure_type=figure_type))
            n += 1
    return Corpus.from_instances(instances)


class TestScoreMatrix:
    def test_csv_round_trip(self, tmp_path):
        matrix = ScoreMatrix(["i1", "i2"], ["a:0s", "b:0s"], [[0.25, 1.0], [0.0, 0.5]])
        path = tmp_path / "scores.csv"
        matrix.to_csv(path)
        again = ScoreMatrix.from_csv(path)
        assert again.instance_ids == matrix.instance_ids
        assert again.config_ids == matrix.config_ids
        assert np.array_equal(again.values, matrix.values)

    def test_range_enforced(self):
        with pytest.raises(ConfigSearchError):
            ScoreMatrix(["i1"], ["a"], [[1.5]])

    def test_shape_enforced(self):
        with pytest.raises(ConfigSearchError):
            ScoreMatrix(["i1"], ["a", "b"], [[0.5]])

    def test_missing_row_named(self):
        matrix = ScoreMatrix(["i1"], ["a"], [[0.5]])
        with pytest.raises(ConfigSearchError, match="ghost"):
            matrix.rows_for(["ghost"])

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,a\nx,0.5\n")
        with pytest.raises(ConfigSearchError, match="instance_id"):
            ScoreMatrix.from_csv(path)


class TestGrouping:
    def test_paper_like_distribution_yields_16_groups(self):
        corpus = paper_like_corpus()
        plan = build_groups(corpus)
        assert len(plan.groups) == 16
        assert plan.split_type == "line chart"
        split_groups = [g for g in plan.groups if g.startswith("line chart::")]
        assert len(split_groups) == 7
        assert "others" in plan.groups
        # 8 homogeneous non-split figure types.
        homogeneous = [
            g for g in plan.groups if "::" not in g and g != "others"
        ]
        assert len(homogeneous) == 8

    def test_groups_partition_dev_pool(self):
        corpus = paper_like_corpus()
        plan = build_groups(corpus)
        seen = []
        for ids in plan.groups.values():
            seen.extend(ids)
        assert sorted(seen) == sorted(i.instance_id for i in corpus.select("dev"))
        assert len(seen) == len(set(seen))

    def test_single_figure_type_splits_into_seven(self):
        corpus = Corpus.from_instances(
            make_figure("a", figure_type="pie chart") + make_figure("b", figure_type="pie chart")
        )
        plan = build_groups(corpus)
        assert len(plan.groups) == 7
        assert all(name.startswith("pie chart::") for name in plan.groups)

    def test_exact_threshold_share_stays_homogeneous(self):
        # 50 figures; one type holds exactly one figure = 2% share. The merge
        # rule is strictly-less-than, so it keeps its own group.
        instances = []
        for i in range(40):
            instances.extend(make_figure(f"a{i}", figure_type="line chart"))
        for i in range(9):
            instances.extend(make_figure(f"b{i}", figure_type="bar chart"))
        instances.extend(make_figure("c0", figure_type="tree"))
        plan = build_groups(Corpus.from_instances(instances))
        assert "tree" in plan.groups
        assert "others" not in plan.groups

    def test_explicit_split_type(self):
        corpus = paper_like_corpus()
        plan = build_groups(corpus, split_type="tree")
        assert plan.split_type == "tree"
        assert sum(1 for g in plan.groups if g.startswith("tree::")) == 7
        assert "line chart" in plan.groups

    def test_unknown_split_type_rejected(self):
        with pytest.raises(ConfigSearchError, match="split_type"):
            build_groups(paper_like_corpus(), split_type="hexbin")

    def test_empty_dev_pool_rejected(self):
        corpus = Corpus.from_instances(make_figure("t", split="test"))
        with pytest.raises(ConfigSearchError, match="dev"):
            build_groups(corpus)


class TestFoldScores:
    def test_partition_sizes(self):
        ids = [f"i{k}" for k in range(10)]
        folds = fold_partition(ids, 5, seed=3)
        assert [len(f) for f in folds] == [2, 2, 2, 2, 2]
        assert sorted(x for f in folds for x in f) == sorted(ids)

    def test_small_group_single_fold(self):
        ids = ["a", "b", "c"]
        folds = fold_partition(ids, 5, seed=3)
        assert folds == [["a", "b", "c"]]

    def test_partition_deterministic(self):
        ids = [f"i{k}" for k in range(20)]
        assert fold_partition(ids, 5, seed=11) == fold_partition(ids, 5, seed=11)
        assert fold_partition(ids, 5, seed=11) != fold_partition(ids, 5, seed=12)

    def test_constant_matrix(self):
        ids = [f"i{k}" for k in range(10)]
        matrix = ScoreMatrix(ids, ["a", "b"], np.full((10, 2), 0.7))
        for fold_mean in fold_scores(matrix, ids, k=5, seed=0):
            assert fold_mean == {"a": 0.7, "b": 0.7}

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(5)
        ids = [f"i{k}" for k in range(20)]
        values = rng.uniform(size=(20, 2))
        matrix = ScoreMatrix(ids, ["a", "b"], values)
        folds = fold_partition(ids, 5, seed=9)
        got = fold_scores(matrix, ids, k=5, seed=9)
        index = {iid: i for i, iid in enumerate(ids)}
        for fold, means in zip(folds, got):
            for j, cid in enumerate(["a", "b"]):
                expected = sum(values[index[iid], j] for iid in fold) / len(fold)
                assert means[cid] == pytest.approx(expected, abs=1e-12)


class TestSelectBest:
    def test_worked_two_fold_example(self):
        # Values are laid out so the two folds carry constant scores:
        # A means (0.8, 0.6), B means (0.75, 0.7).
        ids = [f"i{k}" for k in range(4)]
        folds = fold_partition(ids, 2, seed=[0, 0])
        values = np.zeros((4, 2))
        index = {iid: i for i, iid in enumerate(ids)}
        for iid in folds[0]:
            values[index[iid]] = [0.8, 0.75]
        for iid in folds[1]:
            values[index[iid]] = [0.6, 0.7]
        matrix = ScoreMatrix(ids, ["A", "B"], values)
        diag = select_best(
            matrix, ids, min_repeats=1, k=2, base_seed=0, stable_run=1, max_repeats=1
        )
        assert diag.winner == "B"
        assert diag.scores["A"] == pytest.approx(-0.05, abs=1e-12)
        assert diag.scores["B"] == pytest.approx(-0.025, abs=1e-12)

    def test_single_config_scores_zero(self):
        ids = [f"i{k}" for k in range(6)]
        matrix = ScoreMatrix(ids, ["only"], np.linspace(0, 1, 6).reshape(-1, 1))
        diag = select_best(matrix, ids, min_repeats=2, max_repeats=5)
        assert diag.winner == "only"
        assert diag.scores["only"] == 0.0

    def test_dominating_config_scores_zero(self):
        ids = [f"i{k}" for k in range(10)]
        values = np.column_stack([np.full(10, 0.9), np.full(10, 0.4)])
        matrix = ScoreMatrix(ids, ["good", "bad"], values)
        diag = select_best(matrix, ids, min_repeats=10, max_repeats=20)
        assert diag.winner == "good"
        assert diag.scores["good"] == 0.0
        assert diag.scores["bad"] == pytest.approx(-0.5, abs=1e-12)

    def test_tie_breaks_lexicographically(self):
        ids = [f"i{k}" for k in range(8)]
        values = np.full((8, 2), 0.5)
        matrix = ScoreMatrix(ids, ["zeta", "alpha"], values)
        diag = select_best(matrix, ids, min_repeats=3, max_repeats=5)
        assert diag.winner == "alpha"

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(21)
        ids = [f"i{k}" for k in range(15)]
        matrix = ScoreMatrix(ids, ["a", "b", "c"], rng.uniform(size=(15, 3)))
        one = select_best(matrix, ids, base_seed=7)
        two = select_best(matrix, ids, base_seed=7)
        assert one.winner == two.winner
        assert one.scores == two.scores
        assert one.repeats == two.repeats

    def test_empty_inputs_rejected(self):
        matrix = ScoreMatrix(["i1"], ["a"], [[0.5]])
        with pytest.raises(ConfigSearchError):
            select_best(matrix, [])

    def test_scores_never_positive(self):
        rng = np.random.default_rng(77)
        for trial in range(20):
            ids = [f"i{k}" for k in range(int(rng.integers(3, 14)))]
            matrix = ScoreMatrix(ids, ["a", "b", "c"], rng.uniform(size=(len(ids), 3)))
            diag = select_best(matrix, ids, min_repeats=2, max_repeats=4,
                               base_seed=trial)
            assert all(score <= 1e-15 for score in diag.scores.values())

    def test_per_fold_shift_leaves_deltas_unchanged(self):
        # Adding a constant to every cell shifts each fold mean equally, so
        # the max-subtracted deltas (and final scores) must not move.
        rng = np.random.default_rng(13)
        ids = [f"i{k}" for k in range(12)]
        base = rng.uniform(0.0, 0.6, size=(12, 2))
        shifted = base + 0.3
        one = select_best(ScoreMatrix(ids, ["a", "b"], base), ids,
                          min_repeats=3, max_repeats=3, stable_run=4, base_seed=5)
        two = select_best(ScoreMatrix(ids, ["a", "b"], shifted), ids,
                          min_repeats=3, max_repeats=3, stable_run=4, base_seed=5)
        assert one.winner == two.winner
        for cid in ("a", "b"):
            assert one.scores[cid] == pytest.approx(two.scores[cid], abs=1e-12)

    def test_stability_can_extend_past_minimum(self):
        # Alternating winners force the loop beyond min_repeats.
        rng = np.random.default_rng(3)
        ids = [f"i{k}" for k in range(11)]
        values = rng.uniform(0.45, 0.55, size=(11, 2))
        matrix = ScoreMatrix(ids, ["a", "b"], values)
        diag = select_best(matrix, ids, min_repeats=2, stable_run=3, max_repeats=50)
        assert diag.repeats >= 3  # needs at least stable_run repeats to settle


class TestBuildTypeTable:
    def test_uniformly_best_config_fills_table(self):
        corpus = paper_like_corpus()
        ids = [i.instance_id for i in corpus.select("dev")]
        values = np.column_stack([np.full(len(ids), 0.9), np.full(len(ids), 0.2)])
        matrix = ScoreMatrix(ids, ["best:0s", "worse:0s"], values)
        plan, diagnostics = build_type_table(matrix, corpus, min_repeats=2, max_repeats=4)
        for row in plan.table.values():
            assert set(row.values()) == {"best:0s"}
        assert plan.default_group == "others"
        assert set(plan.table) == {
            g.split("::")[0] for g in diagnostics
        }

    def test_split_rows_differ_by_question_type(self):
        corpus = paper_like_corpus()
        dev = corpus.select("dev")
        ids = [i.instance_id for i in dev]
        values = np.zeros((len(ids), 2))
        for row, inst in enumerate(dev):
            if inst.figure_type == "line chart" and inst.question_type.startswith("binary"):
                values[row] = [0.9, 0.1]
            elif inst.figure_type == "line chart" and inst.question_type.startswith("mc4"):
                values[row] = [0.1, 0.9]
            else:
                values[row] = [0.6, 0.4]
        matrix = ScoreMatrix(ids, ["x:0s", "y:0s"], values)
        plan, _ = build_type_table(matrix, corpus, min_repeats=2, max_repeats=4)
        row = plan.table["line chart"]
        assert row["binary_visual"] == "x:0s"
        assert row["binary_nonvisual"] == "x:0s"
        assert row["mc4_visual"] == "y:0s"
        assert row["mc4_nonvisual"] == "y:0s"
        assert row["unanswerable"] == "x:0s"

    def test_others_row_synthesized_when_no_small_types(self):
        instances = []
        for i in range(5):
            instances.extend(make_figure(f"a{i}", figure_type="line chart"))
        for i in range(5):
            instances.extend(make_figure(f"b{i}", figure_type="bar chart"))
        corpus = Corpus.from_instances(instances)
        ids = [i.instance_id for i in corpus.select("dev")]
        matrix = ScoreMatrix(ids, ["a:0s"], np.full((len(ids), 1), 0.5))
        plan, _ = build_type_table(matrix, corpus, min_repeats=2, max_repeats=4)
        assert "others" in plan.table
        plan.validate()

    def test_plan_total_over_question_types(self):
        corpus = paper_like_corpus()
        ids = [i.instance_id for i in corpus.select("dev")]
        rng = np.random.default_rng(2)
        matrix = ScoreMatrix(ids, ["a:0s", "b:0s"], rng.uniform(size=(len(ids), 2)))
        plan, _ = build_type_table(matrix, corpus, min_repeats=2, max_repeats=4)
        for row in plan.table.values():
            assert set(row) == set(QUESTION_TYPES)
