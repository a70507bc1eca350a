"""Budgeted PUCT tree search over forecaster configurations.

Each node holds one configuration and its validation score. Selection ranks
every scored node by Q + c * P * sqrt(N_parent) / (1 + N), with Q = 1 / (1 + score)
so lower scores are better. A proposer derives a child configuration from the
selected node; a gate can veto the child, which then takes a fixed penalty score.
"""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .backtest import selection_score
from .forecasters import DEFAULT_PARAMS, ForecasterConfig, ForecasterKind

log = logging.getLogger(__name__)

PENALTY_SCORE = 1000.0


@dataclass(frozen=True)
class Budget:
    max_nodes: int
    max_runtime: float = math.inf  # seconds of evaluator wall time

    def __post_init__(self) -> None:
        if self.max_nodes <= 0 or not self.max_runtime > 0:
            raise ValueError("budget limits must be positive")


@dataclass
class SearchNode:
    id: int
    parent: int | None
    config: Any
    validation_score: float | None = None
    visit_count: int = 0
    gate_passed: bool = True
    prior: float = 1.0
    failed: bool = False
    wall_ms: float = 0.0
    test_score: float | None = None
    children: list[int] = field(default_factory=list)

    @property
    def q(self) -> float:
        # log scores can dip below zero; clamp so Q stays in (0, 1]
        return 1.0 / (1.0 + max(self.validation_score, 0.0))


class SearchTree:
    def __init__(self, max_children: int | None = None):
        self.nodes: list[SearchNode] = []
        self.max_children = max_children

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, node_id: int) -> SearchNode:
        return self.nodes[node_id]

    @property
    def root(self) -> SearchNode:
        return self.nodes[0]

    def add(self, parent: int | None, config: Any, prior: float = 1.0) -> SearchNode:
        if (parent is None) != (not self.nodes):
            raise ValueError("exactly the first node is the root")
        node = SearchNode(id=len(self.nodes), parent=parent, config=config, prior=prior)
        self.nodes.append(node)
        if parent is not None:
            self.nodes[parent].children.append(node.id)
        return node

    def backpropagate(self, node_id: int | None) -> None:
        while node_id is not None:
            node = self.nodes[node_id]
            node.visit_count += 1
            node_id = node.parent

    def expandable(self, node: SearchNode) -> bool:
        if node.validation_score is None:
            return False
        return self.max_children is None or len(node.children) < self.max_children

    def best_node(self) -> SearchNode:
        """Lowest validation score among gate-passing nodes (all nodes if none pass)."""
        scored = [n for n in self.nodes if n.validation_score is not None]
        pool = [n for n in scored if n.gate_passed] or scored
        if not pool:
            raise ValueError("tree has no scored nodes")
        return min(pool, key=lambda n: (n.validation_score, n.id))


def puct_value(tree: SearchTree, node: SearchNode, exploration_constant: float) -> float:
    n_parent = tree[node.parent].visit_count if node.parent is not None else node.visit_count
    return node.q + exploration_constant * node.prior * math.sqrt(n_parent) / (1 + node.visit_count)


def puct_select(tree: SearchTree, exploration_constant: float = 1.0) -> SearchNode | None:
    """Highest-PUCT expandable node, lowest id on ties; None when nothing is expandable."""
    if exploration_constant < 0:
        raise ValueError("exploration constant must be non-negative")
    best, best_value = None, -math.inf
    for node in tree.nodes:
        if not tree.expandable(node):
            continue
        value = puct_value(tree, node, exploration_constant)
        if value > best_value:
            best, best_value = node, value
    return best


def always_pass(config: Any) -> bool:
    return True


class ConfigMutator:
    """Seeded random perturbation of a ForecasterConfig's parameters.

    With probability ``switch_kind_prob`` the child switches to the default
    configuration of a different forecaster kind.
    """

    def __init__(self, switch_kind_prob: float = 0.0):
        self.switch_kind_prob = switch_kind_prob

    def __call__(self, config: ForecasterConfig, rng: np.random.Generator) -> ForecasterConfig:
        if rng.random() < self.switch_kind_prob:
            others = [k for k in ForecasterKind if k is not config.kind]
            return ForecasterConfig(others[rng.integers(len(others))])
        p = dict(config.params)
        if config.kind is ForecasterKind.FLATLINE:
            p["history_diffs"] = int(rng.choice([0, 4, 8, 13, 26, 52, 104]))
        elif config.kind is ForecasterKind.CLIMATOLOGICAL:
            p["window_halfwidth"] = int(np.clip(p["window_halfwidth"] + rng.integers(-1, 2), 0, 10))
            p["smoothing"] = float(np.clip(p["smoothing"] + rng.normal(0, 0.05), 0.0, 0.9))
            p["min_samples"] = int(max(1, p["min_samples"] + rng.integers(-1, 2)))
        else:
            p["epsilon"] = float(np.clip(p["epsilon"] * math.exp(rng.normal(0, 0.5)), 1e-4, 10.0))
            p["noise_scale"] = float(np.clip(p["noise_scale"] * math.exp(rng.normal(0, 0.2)), 0.1, 5.0))
            if rng.random() < 0.1:
                p["holiday"] = 1 - p["holiday"]
        return ForecasterConfig(config.kind, p)


@dataclass
class SearchResult:
    tree: SearchTree
    best_node: SearchNode
    trajectory: list[tuple[int, float]]
    runtime: float


def _evaluate(node: SearchNode, evaluator, gate, penalty: float, clock) -> float:
    """Score one node in place; returns evaluator wall time in seconds."""
    if not gate(node.config):
        node.gate_passed = False
        node.validation_score = penalty
        return 0.0
    start = clock()
    try:
        score = float(evaluator(node.config))
        if not math.isfinite(score):
            raise ValueError(f"non-finite score {score}")
        node.validation_score = score
    except Exception as exc:  # noqa: BLE001 - any candidate failure is scored, not raised
        log.warning("node %d evaluation failed: %s", node.id, exc)
        node.failed = True
        node.validation_score = penalty
    elapsed = clock() - start
    node.wall_ms = elapsed * 1000.0
    return elapsed


def run_search(
    root_config: Any,
    proposer: Callable[[Any, np.random.Generator], Any],
    evaluator: Callable[[Any], float],
    budget: Budget,
    gate: Callable[[Any], bool] = always_pass,
    exploration_constant: float = 1.0,
    seed: int = 0,
    penalty: float = PENALTY_SCORE,
    clock: Callable[[], float] = time.perf_counter,
    max_children: int | None = None,
) -> SearchResult:
    """Grow a search tree until either budget limit is reached.

    ``proposer(parent_config, rng)`` returns a child config, or a
    ``(config, prior)`` pair to supply a PUCT prior. Evaluation failures and gate
    rejections score ``penalty``; the search keeps going.
    """
    rng = np.random.default_rng(seed)
    tree = SearchTree(max_children)
    runtime = 0.0
    trajectory: list[tuple[int, float]] = []
    best = math.inf

    def record(node: SearchNode) -> None:
        nonlocal best
        tree.backpropagate(node.id)
        best = min(best, node.validation_score)
        trajectory.append((node.id, best))

    root = tree.add(None, root_config)
    runtime += _evaluate(root, evaluator, gate, penalty, clock)
    record(root)
    while len(tree) < budget.max_nodes and runtime < budget.max_runtime:
        parent = puct_select(tree, exploration_constant)
        if parent is None:
            break
        proposal = proposer(parent.config, rng)
        config, prior = proposal if isinstance(proposal, tuple) else (proposal, 1.0)
        node = tree.add(parent.id, config, prior)
        runtime += _evaluate(node, evaluator, gate, penalty, clock)
        record(node)
    return SearchResult(tree, tree.best_node(), trajectory, runtime)


def select_final_node(
    tree: SearchTree,
    test_evaluator: Callable[[Any], float],
    penalty: float = PENALTY_SCORE,
) -> SearchNode:
    """Argmin of validation + 2 * test over all nodes, lowest id on ties.

    Gate-rejected nodes keep the penalty as their test score without being run.
    """
    if not len(tree):
        raise ValueError("empty tree")
    for node in tree.nodes:
        if node.validation_score is None:
            raise ValueError(f"node {node.id} has no validation score")
        if not node.gate_passed:
            node.test_score = penalty
            continue
        try:
            node.test_score = float(test_evaluator(node.config))
        except Exception as exc:  # noqa: BLE001
            log.warning("node %d test evaluation failed: %s", node.id, exc)
            node.test_score = penalty
    return min(tree.nodes, key=lambda n: (selection_score(n.validation_score, n.test_score), n.id))


def default_root(kind: ForecasterKind | str) -> ForecasterConfig:
    kind = ForecasterKind(kind)
    return ForecasterConfig(kind, DEFAULT_PARAMS[kind])
