import itertools
import math

import numpy as np
import pytest

from hubscore.forecasters import ForecasterConfig, ForecasterKind
from hubscore.search import (
    PENALTY_SCORE,
    Budget,
    ConfigMutator,
    SearchTree,
    default_root,
    puct_select,
    puct_value,
    run_search,
    select_final_node,
)


def q_to_score(q):
    return 1.0 / q - 1.0


def scored_tree(scores, visits=None, max_children=None):
    """Root plus one child per score."""
    tree = SearchTree(max_children)
    root = tree.add(None, "root")
    root.validation_score = 100.0
    for i, s in enumerate(scores):
        n = tree.add(0, f"c{i}")
        n.validation_score = s
        n.visit_count = 1 if visits is None else visits[i]
    root.visit_count = 1 + sum(n.visit_count for n in tree.nodes[1:])
    return tree


def quadratic_evaluator(config):
    return (config - 3.0) ** 2


def step_proposer(config, rng):
    return float(config + rng.normal(0, 1))


class TestPUCT:
    def test_single_root(self):
        tree = SearchTree()
        tree.add(None, "r").validation_score = 1.0
        assert puct_select(tree).id == 0

    def test_exploitation(self):
        tree = scored_tree([q_to_score(0.9), q_to_score(0.1)], max_children=2)
        assert puct_select(tree, 1.0).config == "c0"

    @pytest.mark.parametrize("c", [1e-6, 0.1, 1.0, 10.0])
    def test_exploration_prefers_unvisited(self, c):
        tree = scored_tree([1.0, 1.0], visits=[100, 1], max_children=2)
        assert puct_select(tree, c).config == "c1"

    def test_threshold_between_q_and_visits(self):
        # child A: Q=0.5, N=100; child B: Q=0.4, N=1; root N=102 -> B wins iff c > 0.1 / (sqrt(102) * (1/2 - 1/101))
        tree = scored_tree([q_to_score(0.5), q_to_score(0.4)], visits=[100, 1], max_children=2)
        c_star = 0.1 / (math.sqrt(102) * (0.5 - 1 / 101))
        assert puct_select(tree, c_star * 0.99).config == "c0"
        assert puct_select(tree, c_star * 1.01).config == "c1"

    def test_value_formula(self):
        tree = scored_tree([1.0], visits=[3])
        node = tree[1]
        node.prior = 0.5
        assert puct_value(tree, node, 2.0) == pytest.approx(0.5 + 2.0 * 0.5 * math.sqrt(4) / 4)

    def test_tie_lowest_id(self):
        tree = scored_tree([2.0, 2.0], max_children=2)
        assert puct_select(tree, 0.0).id == 1

    def test_negative_score_clamped(self):
        tree = scored_tree([-3.0])
        assert tree[1].q == 1.0


class TestRunSearch:
    def test_single_node_budget(self):
        calls = []
        res = run_search(0.0, step_proposer, lambda c: calls.append(c) or 1.0, Budget(1))
        assert len(res.tree) == 1 and calls == [0.0]
        assert res.trajectory == [(0, 1.0)]

    def test_budget_and_trajectory(self):
        res = run_search(0.0, step_proposer, quadratic_evaluator, Budget(60), seed=1)
        assert len(res.tree) == 60
        best = [b for _, b in res.trajectory]
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert res.best_node.validation_score == best[-1] < 9.0

    def test_reject_all_gate(self):
        res = run_search(0.0, step_proposer, quadratic_evaluator, Budget(20), gate=lambda c: False)
        assert res.best_node.validation_score == PENALTY_SCORE
        assert all(not n.gate_passed for n in res.tree.nodes)

    def test_failures_are_penalized(self):
        def flaky(c):
            if c > 0:
                raise RuntimeError("boom")
            return 1.0
        res = run_search(0.0, step_proposer, flaky, Budget(30), seed=4)
        failed = [n for n in res.tree.nodes if n.failed]
        assert failed and all(n.validation_score == PENALTY_SCORE for n in failed)
        assert res.best_node.validation_score == 1.0

    def test_runtime_budget(self):
        ticks = itertools.count()
        res = run_search(0.0, step_proposer, quadratic_evaluator, Budget(1000, max_runtime=5.0),
                         clock=lambda: float(next(ticks)))
        assert len(res.tree) == 5 and res.runtime == 5.0

    def test_deterministic(self):
        a = run_search(0.0, step_proposer, quadratic_evaluator, Budget(40), seed=9)
        b = run_search(0.0, step_proposer, quadratic_evaluator, Budget(40), seed=9)
        assert [n.config for n in a.tree.nodes] == [n.config for n in b.tree.nodes]

    def test_prior_tuple(self):
        res = run_search(0.0, lambda c, rng: (c + 1.0, 0.25), quadratic_evaluator, Budget(3))
        assert res.tree[1].prior == 0.25

    def test_max_children_exhausts(self):
        res = run_search(0.0, step_proposer, quadratic_evaluator, Budget(100), max_children=1)
        assert all(len(n.children) <= 1 for n in res.tree.nodes)


class TestSelectFinal:
    def test_one_node(self):
        tree = SearchTree()
        tree.add(None, "a").validation_score = 3.0
        assert select_final_node(tree, lambda c: 1.0).id == 0

    def test_formula(self):
        tree = SearchTree()
        tree.add(None, 0).validation_score = 10.0
        tree.add(0, 1).validation_score = 5.0
        assert select_final_node(tree, {0: 10.0, 1: 20.0}.__getitem__).id == 0

    def test_gated_nodes_take_penalty(self):
        tree = SearchTree()
        tree.add(None, 0).validation_score = 10.0
        n = tree.add(0, 1)
        n.validation_score, n.gate_passed = 1.0, False
        calls = []
        assert select_final_node(tree, lambda c: calls.append(c) or 1.0).id == 0
        assert calls == [0] and n.test_score == PENALTY_SCORE

    def test_order_invariance(self):
        rng = np.random.default_rng(0)
        vals = rng.integers(0, 3, (12, 2)).astype(float)
        results = set()
        for perm in (rng.permutation(12) for _ in range(5)):
            tree = SearchTree()
            for k, i in enumerate(perm):
                tree.add(None if k == 0 else 0, int(i)).validation_score = vals[i, 0]
            chosen = select_final_node(tree, lambda c: vals[c, 1])
            best = min(selection_score_pairs(vals))
            assert vals[chosen.config, 0] + 2 * vals[chosen.config, 1] == best
            results.add(best)
        assert len(results) == 1


def selection_score_pairs(vals):
    return [v + 2 * t for v, t in vals]


class TestMutator:
    @pytest.mark.parametrize("kind", list(ForecasterKind))
    def test_valid_children(self, kind):
        rng = np.random.default_rng(0)
        mut = ConfigMutator(switch_kind_prob=0.3)
        cfg = default_root(kind)
        for _ in range(50):
            cfg = mut(cfg, rng)
            assert isinstance(cfg, ForecasterConfig)

    def test_budget_validation(self):
        with pytest.raises(ValueError):
            Budget(0)
