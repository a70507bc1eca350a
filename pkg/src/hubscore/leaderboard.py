"""Model comparison: eligibility, pairwise relative skill, standardized ranks."""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .core import DataError, TaskKey
from .scoring import Metric, ScoreRecord

MEAN_FLOOR = 1e-9


class ScoreTable:
    """Per-task scores keyed by (model_id, task, metric)."""

    def __init__(self, records: Iterable[ScoreRecord] = (), task_space: Iterable[TaskKey] | None = None):
        self._records: dict[tuple[str, TaskKey, Metric], ScoreRecord] = {}
        self.task_space = None if task_space is None else frozenset(task_space)
        for r in records:
            self.add(r)

    def add(self, record: ScoreRecord) -> None:
        key = (record.model_id, record.task, record.metric)
        if key in self._records:
            raise DataError(f"duplicate score for {record.model_id} {record.task} {record.metric.value}")
        if self.task_space is not None and record.task not in self.task_space:
            raise DataError(f"task {record.task} outside the declared task space")
        self._records[key] = record

    def add_score(self, model_id: str, task: TaskKey, metric: Metric | str, value: float) -> None:
        self.add(ScoreRecord(model_id, task, Metric(metric), float(value)))

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ScoreRecord]:
        return iter(self._records.values())

    def models(self) -> list[str]:
        return sorted({m for m, _, _ in self._records})

    def scores(self, metric: Metric | str) -> dict[str, dict[TaskKey, float]]:
        metric = Metric(metric)
        out: dict[str, dict[TaskKey, float]] = defaultdict(dict)
        for (model, task, m), rec in self._records.items():
            if m is metric:
                out[model][task] = rec.value
        return dict(out)

    def scaled(self, factor: float) -> ScoreTable:
        return ScoreTable(
            (ScoreRecord(r.model_id, r.task, r.metric, r.value * factor) for r in self),
            self.task_space,
        )


def eligibility_cutoff(n_tasks: int, threshold: float) -> int:
    """Minimum scored-task count: threshold * n_tasks truncated to an integer."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    # guard against 0.8 * n landing a hair under an integer
    return math.floor(threshold * n_tasks + 1e-9)


def eligibility(
    table: ScoreTable,
    task_space: Iterable[TaskKey],
    threshold: float = 0.8,
    metric: Metric | str | None = None,
) -> dict[str, bool]:
    space = set(task_space)
    if not space:
        raise DataError("empty task space")
    cutoff = eligibility_cutoff(len(space), threshold)
    covered: dict[str, set[TaskKey]] = defaultdict(set)
    for r in table:
        if (metric is None or r.metric is Metric(metric)) and r.task in space:
            covered[r.model_id].add(r.task)
    return {m: len(covered.get(m, ())) >= cutoff for m in table.models()}


def pairwise_relative(
    table: ScoreTable,
    metric: Metric | str,
    baseline_model: str,
    models: Iterable[str] | None = None,
) -> dict[str, float | None]:
    """Relative skill of each model, rescaled so ``baseline_model`` scores 1.

    For each model i, theta_i is the geometric mean of mean_i(S_ij) / mean_j(S_ij)
    over all compared models j sharing tasks S_ij with i (j = i contributes 1).
    """
    scores = table.scores(metric)
    names = sorted(scores) if models is None else sorted(set(models))
    if baseline_model not in names:
        raise DataError(f"baseline model {baseline_model!r} not among compared models")
    missing = [m for m in names if m not in scores]
    if missing:
        raise DataError(f"no {Metric(metric).value} scores for {missing}")

    def shared_mean(a: str, tasks: set[TaskKey]) -> float:
        mean = float(np.mean([scores[a][t] for t in sorted(tasks)]))
        if mean < MEAN_FLOOR:
            warnings.warn(f"{a}: mean score {mean} clamped to {MEAN_FLOOR}", RuntimeWarning, stacklevel=3)
            mean = MEAN_FLOOR
        return mean

    theta: dict[str, float] = {}
    shares_baseline: dict[str, bool] = {}
    for i in names:
        log_ratios = [0.0]
        for j in names:
            if j == i:
                continue
            shared = scores[i].keys() & scores[j].keys()
            if not shared:
                continue
            log_ratios.append(math.log(shared_mean(i, shared)) - math.log(shared_mean(j, shared)))
        theta[i] = float(np.mean(log_ratios))
        shares_baseline[i] = i == baseline_model or bool(scores[i].keys() & scores[baseline_model].keys())
    base = theta[baseline_model]
    return {i: (math.exp(theta[i] - base) if shares_baseline[i] else None) for i in names}


def standardized_ranks(table: ScoreTable, metric: Metric | str) -> dict[tuple[str, TaskKey], float]:
    """Per-task ranks rescaled to [0, 1] with 1 = lowest score; ties share the mean position."""
    by_task: dict[TaskKey, list[tuple[str, float]]] = defaultdict(list)
    for model, per_task in table.scores(metric).items():
        for task, value in per_task.items():
            by_task[task].append((model, value))
    out: dict[tuple[str, TaskKey], float] = {}
    for task in sorted(by_task):
        entries = by_task[task]
        n = len(entries)
        if n < 2:
            continue
        ranks = rankdata([v for _, v in entries], method="average")
        for (model, _), r in zip(entries, ranks):
            out[(model, task)] = float((n - r) / (n - 1))
    return out


def horizon_breakdown(table: ScoreTable, metric: Metric | str) -> dict[tuple[str, int], float]:
    groups: dict[tuple[str, int], list[float]] = defaultdict(list)
    for model, per_task in table.scores(metric).items():
        for task, value in per_task.items():
            groups[(model, task.horizon)].append(value)
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


@dataclass(frozen=True)
class LeaderboardRow:
    model_id: str
    n_tasks: int
    mean_score: float
    pairwise_relative: float | None
    eligible: bool
    rank: int | None = None


def leaderboard(
    table: ScoreTable,
    task_space: Iterable[TaskKey],
    metric: Metric | str,
    baseline_model: str,
    threshold: float = 0.8,
) -> list[LeaderboardRow]:
    """Eligible models ranked by relative skill, then ineligible models by id."""
    space = set(task_space)
    eligible = eligibility(table, space, threshold, metric)
    scores = table.scores(metric)
    in_play = [m for m in sorted(scores) if eligible.get(m)]
    if baseline_model not in in_play:
        raise DataError(f"baseline model {baseline_model!r} is not eligible")
    rel = pairwise_relative(table, metric, baseline_model, in_play)
    rows = []
    for m in sorted(scores):
        values = [v for t, v in scores[m].items() if t in space]
        rows.append(LeaderboardRow(
            model_id=m,
            n_tasks=len(values),
            mean_score=float(np.mean(values)) if values else math.nan,
            pairwise_relative=rel.get(m),
            eligible=bool(eligible.get(m)),
        ))
    ranked = sorted(
        (r for r in rows if r.pairwise_relative is not None),
        key=lambda r: (r.pairwise_relative, r.model_id),
    )
    out = [replace(r, rank=i) for i, r in enumerate(ranked, start=1)]
    out += sorted((r for r in rows if r.pairwise_relative is None), key=lambda r: r.model_id)
    return out


def rank_summary(ranks: Mapping[tuple[str, TaskKey], float]) -> dict[str, dict[str, float]]:
    """Distribution summary of standardized ranks per model."""
    per_model: dict[str, list[float]] = defaultdict(list)
    for (model, _), r in ranks.items():
        per_model[model].append(r)
    out = {}
    for model in sorted(per_model):
        v = np.asarray(per_model[model])
        q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        out[model] = {"n": float(v.size), "mean": float(v.mean()), "q25": float(q25),
                      "median": float(q50), "q75": float(q75)}
    return out
