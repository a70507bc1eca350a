"""Quantile ensembles of component forecasts."""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .core import DataError, QuantileForecast, TaskKey


class Combiner(str, enum.Enum):
    MEAN_PER_QUANTILE = "mean"
    MEDIAN_PER_QUANTILE = "median"


@dataclass(frozen=True)
class EnsembleSpec:
    """Members to combine and how.

    ``min_members=None`` requires every member for every task; an integer
    switches to skip-if-missing with that many members as the floor.
    """

    members: tuple[str, ...]
    combiner: Combiner = Combiner.MEAN_PER_QUANTILE
    min_members: int | None = None

    def __post_init__(self) -> None:
        members = tuple(self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        if len(set(members)) != len(members):
            raise ValueError("ensemble member ids must be distinct")
        if self.min_members is not None and not 1 <= self.min_members <= len(members):
            raise ValueError("min_members must lie in [1, number of members]")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "combiner", Combiner(self.combiner))


def repair_monotone(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Sort-based rearrangement; identity on already monotone input."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DataError("cannot repair non-finite quantiles")
    return np.sort(v)


def _combine_values(stack: np.ndarray, combiner: Combiner) -> np.ndarray:
    if combiner is Combiner.MEDIAN_PER_QUANTILE:
        return np.median(stack, axis=0)
    # mean as offset from the first member keeps identical members bit-exact
    ref = stack[0]
    return ref + np.mean(stack - ref, axis=0)


def combine(spec: EnsembleSpec, forecasts: Mapping[str, QuantileForecast]) -> QuantileForecast:
    present = [m for m in spec.members if m in forecasts]
    absent = [m for m in spec.members if m not in forecasts]
    if absent and (spec.min_members is None or len(present) < spec.min_members):
        raise DataError(f"missing ensemble members: {', '.join(absent)}")
    tasks = {forecasts[m].task for m in present}
    if len(tasks) != 1:
        raise DataError("ensemble members forecast different tasks")
    stack = np.stack([forecasts[m].values for m in present])
    values = repair_monotone(_combine_values(stack, spec.combiner))
    return QuantileForecast(tasks.pop(), np.maximum(values, 0.0))


def combine_all(
    spec: EnsembleSpec,
    by_model: Mapping[str, Mapping[TaskKey, QuantileForecast]],
) -> dict[TaskKey, QuantileForecast]:
    """Combine every task any member forecast; tasks below the member floor are skipped."""
    tasks = sorted({t for m in spec.members for t in by_model.get(m, {})})
    out = {}
    for task in tasks:
        members = {m: by_model[m][task] for m in spec.members if task in by_model.get(m, {})}
        if spec.min_members is not None and len(members) < spec.min_members:
            continue
        out[task] = combine(spec, members)
    return out
