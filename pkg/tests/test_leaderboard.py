import itertools
import math
from collections import defaultdict
from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubscore.core import DataError, TaskKey, build_task_space
from hubscore.leaderboard import (
    ScoreTable,
    eligibility,
    eligibility_cutoff,
    horizon_breakdown,
    leaderboard,
    pairwise_relative,
    rank_summary,
    standardized_ranks,
)

REF = date(2026, 1, 3)


def task(i=0, h=0, loc="01"):
    return TaskKey(REF + timedelta(weeks=i), loc, h)


def table_from(scores: dict[str, dict[TaskKey, float]], metric="wis") -> ScoreTable:
    t = ScoreTable()
    for model, per in scores.items():
        for k, v in per.items():
            t.add_score(model, k, metric, v)
    return t


def random_table(rng, n_models=4, n_tasks=30, coverage=0.8):
    tasks = [task(i // 4, i % 4) for i in range(n_tasks)]
    scores = {}
    for m in range(n_models):
        keep = rng.random(n_tasks) < coverage
        keep[0] = True
        scores[f"m{m}"] = {t: float(rng.gamma(2.0, 1.0 + m)) for t, k in zip(tasks, keep) if k}
    return table_from(scores)


class TestEligibility:
    @pytest.mark.parametrize("n,expected", [(4680, 3744), (3432, 2745), (4056, 3244), (10, 8)])
    def test_cutoffs(self, n, expected):
        assert eligibility_cutoff(n, 0.8) == expected

    def test_full_coverage_always_eligible(self):
        space = build_task_space([REF], ["01", "02"])
        t = table_from({"a": {k: 1.0 for k in space}, "b": {space[0]: 1.0}})
        for thr in (0.1, 0.5, 0.8, 1.0):
            assert eligibility(t, space, thr)["a"]
        assert not eligibility(t, space, 0.8)["b"]

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            eligibility_cutoff(10, 0.0)


class TestPairwise:
    def test_identical_models(self):
        s = {task(i): float(i + 1) for i in range(5)}
        rel = pairwise_relative(table_from({"a": s, "b": dict(s)}), "wis", "a")
        assert rel == {"a": 1.0, "b": 1.0}

    def test_hand_case(self):
        t = task()
        rel = pairwise_relative(table_from({"x": {t: 1.0}, "y": {t: 2.0}, "z": {t: 4.0}}), "wis", "y")
        np.testing.assert_allclose([rel["x"], rel["y"], rel["z"]], [0.5, 1.0, 2.0], rtol=1e-12)

    def test_against_bruteforce(self):
        rng = np.random.default_rng(7)
        table = random_table(rng, n_models=5)
        scores = table.scores("wis")
        names = sorted(scores)
        theta = {}
        for i in names:
            ratios = []
            for j in names:
                shared = set(scores[i]) & set(scores[j])
                if shared:
                    ratios.append(np.mean([scores[i][k] for k in shared]) / np.mean([scores[j][k] for k in shared]))
            theta[i] = np.prod(ratios) ** (1 / len(ratios))
        rel = pairwise_relative(table, "wis", "m2")
        for m in names:
            assert rel[m] == pytest.approx(theta[m] / theta["m2"], rel=1e-12)
        assert rel["m2"] == 1.0

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=25, deadline=None)
    def test_scale_invariance(self, c):
        table = random_table(np.random.default_rng(11))
        a = pairwise_relative(table, "wis", "m0")
        b = pairwise_relative(table.scaled(c), "wis", "m0")
        for m in a:
            assert b[m] == pytest.approx(a[m], rel=1e-12)

    def test_disjoint_from_baseline(self):
        rel = pairwise_relative(table_from({"a": {task(0): 1.0}, "b": {task(1): 2.0}}), "wis", "a")
        assert rel["b"] is None

    def test_zero_mean_clamped(self):
        t = task()
        with pytest.warns(RuntimeWarning):
            rel = pairwise_relative(table_from({"a": {t: 0.0}, "b": {t: 1.0}}), "wis", "b")
        assert 0 < rel["a"] < 1e-4

    def test_unknown_baseline(self):
        with pytest.raises(DataError):
            pairwise_relative(table_from({"a": {task(): 1.0}}), "wis", "zzz")


def brute_force_ranks(values: list[float]) -> list[float]:
    """Mean standardized position over every ordering consistent with the scores."""
    n = len(values)
    acc = np.zeros(n)
    count = 0
    for perm in itertools.permutations(range(n)):
        ordered = [values[p] for p in perm]
        if ordered != sorted(ordered):
            continue
        count += 1
        for pos, p in enumerate(perm):
            acc[p] += (n - 1 - pos) / (n - 1)
    return list(acc / count)


class TestRanks:
    def test_three_models(self):
        t = task()
        r = standardized_ranks(table_from({"a": {t: 1.0}, "b": {t: 2.0}, "c": {t: 3.0}}), "wis")
        assert (r[("a", t)], r[("b", t)], r[("c", t)]) == (1.0, 0.5, 0.0)

    def test_tie_at_best(self):
        t = task()
        r = standardized_ranks(table_from({"a": {t: 1.0}, "b": {t: 1.0}, "c": {t: 3.0}}), "wis")
        assert r[("a", t)] == r[("b", t)] == 0.75

    @given(st.lists(st.integers(0, 3), min_size=2, max_size=5))
    @settings(max_examples=60, deadline=None)
    def test_ties_match_permutation_oracle(self, vals):
        t = task()
        names = [f"m{i}" for i in range(len(vals))]
        r = standardized_ranks(table_from({n: {t: float(v)} for n, v in zip(names, vals)}), "wis")
        expected = brute_force_ranks([float(v) for v in vals])
        np.testing.assert_allclose([r[(n, t)] for n in names], expected, atol=1e-12)

    def test_single_model_task_skipped(self):
        assert standardized_ranks(table_from({"a": {task(): 1.0}}), "wis") == {}

    def test_summary(self):
        t = task()
        s = rank_summary(standardized_ranks(table_from({"a": {t: 1.0}, "b": {t: 2.0}}), "wis"))
        assert s["a"]["mean"] == 1.0 and s["b"]["median"] == 0.0 and s["a"]["n"] == 1


class TestHorizonBreakdown:
    def test_absent_horizons(self):
        hb = horizon_breakdown(table_from({"a": {task(0, 0): 1.0, task(1, 0): 3.0}}), "wis")
        assert hb == {("a", 0): 2.0}

    def test_constant(self):
        hb = horizon_breakdown(table_from({"a": {task(i, h): 2.5 for i in range(3) for h in range(4)}}), "wis")
        assert all(v == 2.5 for v in hb.values()) and len(hb) == 4

    def test_groupby_oracle(self):
        table = random_table(np.random.default_rng(3))
        groups = defaultdict(list)
        for r in table:
            groups[(r.model_id, r.task.horizon)].append(r.value)
        expected = {k: sum(v) / len(v) for k, v in groups.items()}
        got = horizon_breakdown(table, "wis")
        assert got.keys() == expected.keys()
        for k in expected:
            assert got[k] == pytest.approx(expected[k], rel=1e-12)


class TestLeaderboard:
    def test_ordering_and_eligibility(self):
        space = [task(i) for i in range(10)]
        scores = {
            "base": {t: 2.0 for t in space},
            "good": {t: 1.0 for t in space},
            "sparse": {t: 0.1 for t in space[:3]},
        }
        rows = leaderboard(table_from(scores), space, "wis", "base")
        assert [r.model_id for r in rows] == ["good", "base", "sparse"]
        assert [r.rank for r in rows] == [1, 2, None]
        assert rows[0].pairwise_relative == pytest.approx(0.5)
        assert rows[2].eligible is False and rows[2].n_tasks == 3
        assert math.isclose(rows[1].mean_score, 2.0)

    def test_baseline_must_be_eligible(self):
        space = [task(i) for i in range(10)]
        with pytest.raises(DataError):
            leaderboard(table_from({"a": {space[0]: 1.0}}), space, "wis", "a")


def test_table_rejects_duplicates_and_foreign_tasks():
    t = ScoreTable(task_space=[task(0)])
    t.add_score("a", task(0), "wis", 1.0)
    with pytest.raises(DataError):
        t.add_score("a", task(0), "wis", 2.0)
    with pytest.raises(DataError):
        t.add_score("a", task(1), "wis", 2.0)
