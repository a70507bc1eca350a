"""Rolling-origin evaluation over validation/test splits and the two-stage selection score."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import date

import numpy as np

from .core import HORIZONS, WEEK, DataError, ObservationSeries, TaskKey, lookup_truth, weekly_dates
from .scoring import Metric, score_forecast

log = logging.getLogger(__name__)

# Hub data for the week of the reference date is not yet published.
REPORTING_LAG_WEEKS = 1

DateRange = tuple[date, date]


def _overlaps(a: DateRange, b: DateRange) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


@dataclass(frozen=True)
class EvaluationSplit:
    """Inclusive date ranges of forecast origins for each evaluation block."""

    validation: tuple[DateRange, ...]
    retrospective_test: DateRange
    prospective: DateRange | None = None

    def __post_init__(self) -> None:
        validation = tuple((date.fromisoformat(str(a)), date.fromisoformat(str(b))) for a, b in self.validation)
        if not validation:
            raise ValueError("validation block must contain at least one range")
        test = tuple(date.fromisoformat(str(x)) for x in self.retrospective_test)
        prospective = None
        if self.prospective is not None:
            prospective = tuple(date.fromisoformat(str(x)) for x in self.prospective)
        ranges = [*validation, test] + ([prospective] if prospective else [])
        for r in ranges:
            if r[0] > r[1]:
                raise ValueError(f"range {r[0]}..{r[1]} ends before it starts")
        for i, a in enumerate(ranges):
            for b in ranges[i + 1 :]:
                if _overlaps(a, b):
                    raise ValueError(f"ranges {a[0]}..{a[1]} and {b[0]}..{b[1]} overlap")
        object.__setattr__(self, "validation", validation)
        object.__setattr__(self, "retrospective_test", test)
        object.__setattr__(self, "prospective", prospective)


def origins(ranges: Iterable[DateRange]) -> list[date]:
    """Weekly origins across the ranges, sorted and de-duplicated."""
    return sorted({d for start, end in ranges for d in weekly_dates(start, end)})


def information_set(data: Mapping[str, ObservationSeries], origin: date) -> dict[str, ObservationSeries]:
    """What a forecaster may see at ``origin``: points before the reporting cutoff."""
    cutoff = origin - (REPORTING_LAG_WEEKS - 1) * WEEK
    return {code: s.up_to(cutoff, inclusive=False) for code, s in data.items()}


def rolling_task_scores(
    forecaster,
    data: Mapping[str, ObservationSeries],
    ranges: Sequence[DateRange],
    metric: Metric | str = Metric.WIS,
    horizons: Sequence[int] = HORIZONS,
) -> dict[TaskKey, float]:
    """Per-task scores over every (origin, location, horizon) with available truth."""
    metric = Metric(metric)
    output = "sample" if metric.needs_samples else "quantile"
    out: dict[TaskKey, float] = {}
    for origin in origins(ranges):
        tasks = [
            t for t in (TaskKey(origin, code, h) for code in sorted(data) for h in horizons)
            if lookup_truth(data[t.location], t) is not None
        ]
        if not tasks:
            log.warning("origin %s has no scorable truth; skipped", origin)
            continue
        forecasts = forecaster(information_set(data, origin), tasks, output=output)
        for t in tasks:
            out[t] = score_forecast(forecasts[t], lookup_truth(data[t.location], t), metric)
    if not out:
        raise DataError("no scorable tasks in the evaluation block")
    return out


def rolling_score(forecaster, data, ranges, metric=Metric.WIS, horizons=HORIZONS) -> float:
    """Mean per-task score across all rolling origins in ``ranges``."""
    scores = rolling_task_scores(forecaster, data, ranges, metric, horizons)
    return float(np.mean([scores[t] for t in sorted(scores)]))


def rolling_validation_score(forecaster, data, split: EvaluationSplit, metric=Metric.WIS, horizons=HORIZONS) -> float:
    return rolling_score(forecaster, data, split.validation, metric, horizons)


def rolling_test_score(forecaster, data, split: EvaluationSplit, metric=Metric.WIS, horizons=HORIZONS) -> float:
    return rolling_score(forecaster, data, [split.retrospective_test], metric, horizons)


def selection_score(validation_wis: float, test_wis: float) -> float:
    """Validation score plus twice the retrospective-test score."""
    if validation_wis < 0 or test_wis < 0:
        raise ValueError("scores must be non-negative")
    return validation_wis + 2.0 * test_wis
