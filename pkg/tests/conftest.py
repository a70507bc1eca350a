from __future__ import annotations

import math
from datetime import date, timedelta

import numpy as np
import pytest

from hubscore.core import (
    QUANTILE_LEVELS,
    Location,
    LocationTable,
    ObservationSeries,
    QuantileForecast,
    TaskKey,
)

ACCEPTANCE_RESULTS: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} {detail}")


def saturday(d: date) -> date:
    """First Saturday on or after ``d``."""
    return d + timedelta(days=(5 - d.weekday()) % 7)


def series_from(location: str, start: date, values, interpolated=None) -> ObservationSeries:
    values = np.asarray(values, dtype=float)
    dates = tuple(start + timedelta(weeks=i) for i in range(values.size))
    return ObservationSeries(location, dates, values, interpolated)


def seasonal_history(
    locations: LocationTable,
    start: date,
    n_weeks: int,
    seed: int = 0,
) -> dict[str, ObservationSeries]:
    """Noisy winter-peaking weekly counts proportional to population."""
    rng = np.random.default_rng(seed)
    out = {}
    for k, code in enumerate(sorted(locations)):
        pop = locations[code].population
        t = np.arange(n_weeks)
        phase = (t + (start.timetuple().tm_yday // 7) - 4 + k) % 52
        curve = 1.0 + 25.0 * np.exp(-0.5 * ((phase - 14) / 4.0) ** 2)
        mean = curve * pop / 1e5
        values = np.round(np.maximum(mean * np.exp(rng.normal(0, 0.15, n_weeks)), 0.0))
        out[code] = series_from(code, start, values)
    return out


def point_mass(task: TaskKey, value: float) -> QuantileForecast:
    return QuantileForecast(task, np.full(len(QUANTILE_LEVELS), float(value)))


@pytest.fixture
def locations() -> LocationTable:
    return LocationTable([
        Location("01", "Alabama", 5_000_000),
        Location("02", "Alaska", 700_000),
        Location("06", "California", 39_000_000),
    ])


@pytest.fixture
def history(locations) -> dict[str, ObservationSeries]:
    return seasonal_history(locations, saturday(date(2019, 9, 1)), 4 * 52 + 20, seed=3)


def gaussian_crps(mu: float, sigma: float, y: float) -> float:
    z = (y - mu) / sigma
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + math.erf(z / math.sqrt(2)))
    return sigma * (z * (2 * cdf - 1) + 2 * pdf - 1 / math.sqrt(math.pi))


def submission_csv(forecasts, target="wk inc flu hosp", extra_rows=()) -> str:
    """Hand-built hub CSV for {TaskKey: 23 values}, canonical row order."""
    from hubscore.core import LEVEL_STRINGS

    lines = ["reference_date,target,horizon,location,output_type,output_type_id,value"]
    for task in sorted(forecasts):
        for level, v in zip(LEVEL_STRINGS, forecasts[task]):
            lines.append(f"{task.reference_date},{target},{task.horizon},{task.location},quantile,{level},{v:g}")
    lines.extend(extra_rows)
    return "\n".join(lines) + "\n"


def write_hub(tmp, models: dict, truth: dict, locations: LocationTable, target="wk inc flu hosp"):
    """Lay out locations.csv, targets.csv and submissions/<model>.csv under ``tmp``."""
    from hubscore.hubio import emit_locations, emit_target_series

    (tmp / "locations.csv").write_bytes(emit_locations(locations))
    (tmp / "targets.csv").write_bytes(emit_target_series(truth))
    sub_dir = tmp / "submissions"
    sub_dir.mkdir(exist_ok=True)
    for name, forecasts in models.items():
        (sub_dir / f"{name}.csv").write_text(submission_csv(forecasts, target))
    return {
        "locations": str(tmp / "locations.csv"),
        "targets": str(tmp / "targets.csv"),
        "submissions": str(sub_dir),
        "out": str(tmp / "out"),
    }


def synthetic_submissions(truth, locations, ref_dates, seed=0):
    """Three toy models: an oracle point mass, a noisy Gaussian and a flat line."""
    from hubscore.forecasters import flatline_forecast
    from hubscore.core import lookup_truth

    rng = np.random.default_rng(seed)
    z = np.array([-2.326, -1.96, -1.645, -1.282, -1.036, -0.842, -0.674, -0.524, -0.385, -0.253, -0.126, 0.0,
                  0.126, 0.253, 0.385, 0.524, 0.674, 0.842, 1.036, 1.282, 1.645, 1.96, 2.326])
    models = {"oracle": {}, "gauss": {}, "flat": {}}
    for ref in ref_dates:
        for code in sorted(locations):
            seen = truth[code].up_to(ref, inclusive=False)
            for h in range(4):
                task = TaskKey(ref, code, h)
                y = lookup_truth(truth[code], task)
                if y is None:
                    continue
                models["oracle"][task] = np.full(23, y)
                centre = y * np.exp(rng.normal(0, 0.2))
                models["gauss"][task] = np.round(np.maximum(centre + z * (0.15 * centre + 1), 0), 3)
                models["flat"][task] = np.round(flatline_forecast(seen, task, n_samples=500).values, 3)
    return models
