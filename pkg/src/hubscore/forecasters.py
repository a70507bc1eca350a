"""Reference forecasters: flat-line persistence, climatology, pooled fourth-root AR(6).

Every forecaster sees only observations dated on or before the task's reference
date. Randomized forecasters draw from a stream seeded by (seed, location,
reference date), so horizons of one origin share random numbers.
"""

from __future__ import annotations

import enum
import logging
import zlib
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date, timedelta
from types import MappingProxyType
from typing import Any

import numpy as np

from .core import (
    QUANTILE_LEVELS,
    DataError,
    LocationTable,
    ObservationSeries,
    QuantileForecast,
    SampleForecast,
    TaskKey,
    epiweek,
)
from .ensemble import repair_monotone

log = logging.getLogger(__name__)

AR_ORDER = 6
RATE_SCALE = 100_000.0
WEEKS_PER_YEAR = 52


class ForecasterKind(str, enum.Enum):
    FLATLINE = "flatline"
    CLIMATOLOGICAL = "climatological"
    AR6_POOLED = "ar6_pooled"


DEFAULT_PARAMS: dict[ForecasterKind, dict[str, Any]] = {
    ForecasterKind.FLATLINE: {"history_diffs": 0, "n_samples": 10_000, "seed": 0},
    ForecasterKind.CLIMATOLOGICAL: {
        "window_halfwidth": 3,
        "min_samples": 3,
        "smoothing": 0.0,
        "start_date": "",
    },
    ForecasterKind.AR6_POOLED: {
        "epsilon": 0.01,
        "epsilon_std": 1e-4,
        "n_trajectories": 2_000,
        "noise_scale": 1.0,
        "holiday": 0,
        "seed": 0,
    },
}


def _coerce(value: Any, default: Any) -> Any:
    if isinstance(default, str):
        return str(value)
    if isinstance(default, int):
        as_float = float(value)
        if not as_float.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(as_float)
    return float(value)


@dataclass(frozen=True)
class ForecasterConfig:
    kind: ForecasterKind
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        kind = ForecasterKind(self.kind)
        defaults = DEFAULT_PARAMS[kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {kind.value} parameters: {sorted(unknown)}")
        merged = {key: _coerce(self.params.get(key, default), default) for key, default in defaults.items()}
        for key, value in merged.items():
            if key.startswith("epsilon") and not value > 0:
                raise ValueError(f"{key} must be positive")
        if kind is ForecasterKind.CLIMATOLOGICAL:
            if merged["window_halfwidth"] < 0:
                raise ValueError("window_halfwidth must be >= 0 (window width 2h+1 is odd)")
            if not 0.0 <= merged["smoothing"] <= 1.0:
                raise ValueError("smoothing must lie in [0, 1]")
            if merged["min_samples"] < 1:
                raise ValueError("min_samples must be >= 1")
        if kind is ForecasterKind.AR6_POOLED and not merged["noise_scale"] >= 0:
            raise ValueError("noise_scale must be non-negative")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", MappingProxyType(merged))

    def replace(self, **params: Any) -> ForecasterConfig:
        return ForecasterConfig(self.kind, {**self.params, **params})

    def to_text(self) -> str:
        """Flat key=value lines, ``kind`` first."""
        lines = [f"kind = {self.kind.value}"]
        lines += [f"{k} = {v}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_items(cls, items: Mapping[str, str]) -> ForecasterConfig:
        items = dict(items)
        kind = ForecasterKind(items.pop("kind"))
        return cls(kind, items)


def _task_rng(seed: int, task: TaskKey) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, zlib.crc32(task.location.encode()), task.reference_date.toordinal()])
    return np.random.default_rng(ss)


def _steps_ahead(last: date, task: TaskKey) -> int:
    return max(1, (task.target_end_date - last).days // 7)


def _to_quantile_forecast(task: TaskKey, values: np.ndarray) -> QuantileForecast:
    return QuantileForecast(task, repair_monotone(np.maximum(values, 0.0)))


# -- flat line -----------------------------------------------------------------


def _flatline_samples(series: ObservationSeries, task: TaskKey, history_diffs: int, n_samples: int, seed: int):
    hist = series.up_to(task.reference_date)
    if len(hist) < 2:
        raise DataError(f"{series.location}: need ≥2 observations for a flat-line forecast")
    diffs = np.diff(hist.values)
    if history_diffs:
        diffs = diffs[-history_diffs:]
    pool = np.concatenate([diffs, -diffs])
    steps = _steps_ahead(hist.end, task)
    rng = _task_rng(seed, task)
    # (steps, n) row-major draws: the first k rows match across horizons
    draws = pool[rng.integers(0, pool.size, size=(steps, max(n_samples // 2, 1)))]
    sums = draws.sum(axis=0)
    # antithetic pairs keep the path set exactly symmetric about the last value
    return float(hist.values[-1]), hist.values[-1] + np.concatenate([sums, -sums])


def flatline_forecast(
    series: ObservationSeries,
    task: TaskKey,
    history_diffs: int = 0,
    n_samples: int = 10_000,
    seed: int = 0,
) -> QuantileForecast:
    """Persistence forecast with symmetrized one-week-difference uncertainty.

    The median is pinned to the last observation; the other quantiles come from
    the last value plus sums of resampled +/- historical differences.
    ``history_diffs`` limits the differences to the most recent ones (0 = all).
    """
    last, paths = _flatline_samples(series, task, history_diffs, n_samples, seed)
    q = np.quantile(paths, QUANTILE_LEVELS)
    q[len(q) // 2] = last
    return _to_quantile_forecast(task, q)


def flatline_samples(series, task, history_diffs=0, n_samples=1000, seed=0) -> SampleForecast:
    _, paths = _flatline_samples(series, task, history_diffs, n_samples, seed)
    return SampleForecast(task, np.maximum(paths, 0.0))


# -- climatology ---------------------------------------------------------------


def _week_number(d: date) -> int:
    return min(epiweek(d)[1], WEEKS_PER_YEAR)


def _in_window(week: int, target: int, halfwidth: int) -> bool:
    dist = abs(week - target)
    return min(dist, WEEKS_PER_YEAR - dist) <= halfwidth


def climatological_pools(
    history: Mapping[str, ObservationSeries],
    locations: LocationTable,
    task: TaskKey,
    window_halfwidth: int = 3,
    start_date: date | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(same-location counts, all-location rates per 100k) inside the seasonal window."""
    target = _week_number(task.target_end_date)
    own, rates = [], []
    for code in sorted(history):
        series = history[code]
        pop = locations[code].population
        for d, v in zip(series.dates, series.values):
            if d > task.reference_date or (start_date is not None and d < start_date):
                continue
            if not _in_window(_week_number(d), target, window_halfwidth):
                continue
            rates.append(v / pop * RATE_SCALE)
            if code == task.location:
                own.append(v)
    return np.asarray(own, dtype=float), np.asarray(rates, dtype=float)


def _climatological_quantiles(history, locations, task, levels, window_halfwidth, min_samples, smoothing, start_date):
    own, rates = climatological_pools(history, locations, task, window_halfwidth, start_date)
    parts = []
    if own.size >= min_samples:
        parts.append(np.percentile(own, np.asarray(levels) * 100))
    if rates.size >= min_samples:
        pop = locations[task.location].population
        parts.append(np.percentile(rates, np.asarray(levels) * 100) * pop / RATE_SCALE)
    if not parts:
        log.warning("climatology: no samples for %s; emitting zeros", task)
        return np.zeros(len(levels))
    combined = parts[0] if len(parts) == 1 else 0.5 * (parts[0] + parts[1])
    return combined * (1.0 - smoothing)


def climatological_forecast(
    history: Mapping[str, ObservationSeries],
    locations: LocationTable,
    task: TaskKey,
    window_halfwidth: int = 3,
    min_samples: int = 3,
    smoothing: float = 0.0,
    start_date: date | None = None,
) -> QuantileForecast:
    """Average of geo-specific and population-rate pooled seasonal-window quantiles.

    Week-of-year is the MMWR week, with week 53 folded onto week 52 and the
    window wrapping across the year boundary. ``smoothing`` shrinks toward zero.
    """
    q = _climatological_quantiles(
        history, locations, task, QUANTILE_LEVELS, window_halfwidth, min_samples, smoothing, start_date
    )
    return _to_quantile_forecast(task, q)


def climatological_samples(history, locations, task, n_samples=1000, **kwargs) -> SampleForecast:
    """The combined quantile function evaluated at n evenly spaced mid-levels."""
    levels = (np.arange(n_samples) + 0.5) / n_samples
    q = _climatological_quantiles(
        history, locations, task, levels,
        kwargs.get("window_halfwidth", 3), kwargs.get("min_samples", 3),
        kwargs.get("smoothing", 0.0), kwargs.get("start_date"),
    )
    return SampleForecast(task, np.maximum(q, 0.0))


# -- pooled AR(6) on the fourth-root scale -------------------------------------


def fourth_root(x, epsilon: float):
    return np.power(np.asarray(x, dtype=float) + epsilon, 0.25)


def inverse_fourth_root(z, epsilon: float):
    return np.power(np.maximum(np.asarray(z, dtype=float), 0.0), 4) - epsilon


def holiday_indicator(week_end: date) -> float:
    """1.0 for the epiweek containing Dec 25 or Jan 1."""
    start = week_end - timedelta(days=6)
    for d in (start + timedelta(days=i) for i in range(7)):
        if (d.month, d.day) in ((12, 25), (1, 1)):
            return 1.0
    return 0.0


@dataclass(frozen=True, eq=False)
class AR6Fit:
    """Shared AR coefficients (lag 1 first), intercept and per-location innovation sd."""

    coefficients: np.ndarray
    intercept: float
    location_sigma: Mapping[str, float]
    pooled_sigma: float
    epsilon: float
    epsilon_std: float
    exog_coefficient: float | None = None

    @property
    def order(self) -> int:
        return self.coefficients.size

    def sigma(self, location: str) -> float:
        return self.location_sigma.get(location, self.pooled_sigma)

    @property
    def stationary_level(self) -> float:
        denom = 1.0 - float(self.coefficients.sum())
        return self.intercept / denom if abs(denom) > 1e-6 else self.intercept


def fit_pooled_ar(
    transformed: Mapping[str, np.ndarray],
    order: int = AR_ORDER,
    epsilon_std: float = 1e-4,
    exog: Mapping[str, np.ndarray] | None = None,
    strict: bool = True,
) -> tuple[np.ndarray, float, float | None, dict[str, float], float]:
    """Pooled OLS on already-transformed series.

    Returns (coefficients, intercept, exog coefficient, per-location sigma, pooled sigma).
    """
    blocks, targets, owners = [], [], []
    for code in sorted(transformed):
        z = np.asarray(transformed[code], dtype=float)
        n_rows = z.size - order
        if n_rows <= 0:
            continue
        lags = np.column_stack([z[order - k : z.size - k] for k in range(1, order + 1)])
        cols = [np.ones(n_rows), lags]
        if exog is not None:
            cols.append(np.asarray(exog[code], dtype=float)[order:, None])
        blocks.append(np.column_stack(cols))
        targets.append(z[order:])
        owners += [code] * n_rows
    if not blocks:
        raise DataError("degenerate design matrix: no series long enough for the lag order")
    X, y = np.vstack(blocks), np.concatenate(targets)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if strict and rank < X.shape[1]:
        raise DataError("degenerate design matrix")
    resid = y - X @ beta
    owners_arr = np.asarray(owners)
    pooled = max(float(np.sqrt(np.mean(resid**2))), epsilon_std)
    sigma = {}
    for code in sorted(transformed):
        r = resid[owners_arr == code]
        sigma[code] = max(float(np.sqrt(np.mean(r**2))), epsilon_std) if r.size else pooled
    exog_coef = float(beta[-1]) if exog is not None else None
    return beta[1 : order + 1].copy(), float(beta[0]), exog_coef, sigma, pooled


def ar6_pooled_fit(
    history: Mapping[str, ObservationSeries],
    epsilon: float = 0.01,
    epsilon_std: float = 1e-4,
    holiday: bool = False,
    strict: bool = True,
) -> AR6Fit:
    """Fit shared AR(6) coefficients on (x + epsilon)^(1/4) across all locations.

    ``strict=False`` accepts a rank-deficient design and keeps the minimum-norm
    least-squares solution instead of raising.
    """
    transformed = {code: fourth_root(s.values, epsilon) for code, s in history.items()}
    exog = None
    if holiday:
        exog = {code: np.array([holiday_indicator(d) for d in s.dates]) for code, s in history.items()}
    coefs, intercept, exog_coef, sigma, pooled = fit_pooled_ar(transformed, AR_ORDER, epsilon_std, exog, strict)
    for code, s in history.items():
        if len(s) <= AR_ORDER:
            sigma[code] = pooled
    return AR6Fit(coefs, intercept, MappingProxyType(sigma), pooled, epsilon, epsilon_std, exog_coef)


def _lag_buffer(fit: AR6Fit, series: ObservationSeries, task: TaskKey) -> tuple[np.ndarray, date | None]:
    hist = series.up_to(task.reference_date)
    z = fourth_root(hist.values[-fit.order :], fit.epsilon)
    if z.size < fit.order:
        z = np.concatenate([np.full(fit.order - z.size, fit.stationary_level), z])
    # most recent first, matching coefficient order
    return z[::-1].copy(), hist.end


def _simulate(fit: AR6Fit, series, task, n: int, rng: np.random.Generator | None, noise_scale: float) -> np.ndarray:
    buf, last = _lag_buffer(fit, series, task)
    last = last if last is not None else task.reference_date
    steps = _steps_ahead(last, task)
    state = np.tile(buf, (n, 1))
    sd = fit.sigma(task.location) * noise_scale
    noise = rng.standard_normal((steps, n)) if rng is not None else np.zeros((steps, n))
    z = state[:, 0]
    for s in range(steps):
        z = fit.intercept + state @ fit.coefficients
        if fit.exog_coefficient is not None:
            z = z + fit.exog_coefficient * holiday_indicator(last + timedelta(weeks=s + 1))
        z = z + sd * noise[s]
        state = np.column_stack([z, state[:, :-1]])
    return z


def ar6_deterministic(fit: AR6Fit, series: ObservationSeries, task: TaskKey) -> float:
    """Noise-free recursion to the target week, on the count scale."""
    z = _simulate(fit, series, task, 1, None, 0.0)
    return float(max(inverse_fourth_root(z[0], fit.epsilon), 0.0))


def ar6_pooled_forecast(
    fit: AR6Fit,
    series: ObservationSeries,
    task: TaskKey,
    n_trajectories: int = 2_000,
    seed: int = 0,
    noise_scale: float = 1.0,
) -> QuantileForecast:
    """Simulated recursive paths with Normal(0, sigma_location) innovations."""
    z = _simulate(fit, series, task, n_trajectories, _task_rng(seed, task), noise_scale)
    zq = np.quantile(z, QUANTILE_LEVELS)
    return _to_quantile_forecast(task, inverse_fourth_root(zq, fit.epsilon))


def ar6_pooled_samples(fit, series, task, n_trajectories=1000, seed=0, noise_scale=1.0) -> SampleForecast:
    z = _simulate(fit, series, task, n_trajectories, _task_rng(seed, task), noise_scale)
    return SampleForecast(task, np.maximum(inverse_fourth_root(z, fit.epsilon), 0.0))


# -- configured forecaster -----------------------------------------------------

Forecast = QuantileForecast | SampleForecast
Forecaster = Callable[..., dict[TaskKey, Forecast]]


class ConfiguredForecaster:
    """Callable ``(history, tasks, output="quantile"|"sample") -> {task: forecast}``."""

    def __init__(self, config: ForecasterConfig, locations: LocationTable, n_samples: int = 1000):
        self.config = config
        self.locations = locations
        self.n_samples = n_samples

    def __call__(
        self,
        history: Mapping[str, ObservationSeries],
        tasks: Sequence[TaskKey],
        output: str = "quantile",
    ) -> dict[TaskKey, Forecast]:
        if output not in ("quantile", "sample"):
            raise ValueError(f"unknown output {output!r}")
        p = self.config.params
        kind = self.config.kind
        sample = output == "sample"
        empty = ObservationSeries("")
        out: dict[TaskKey, Forecast] = {}
        if kind is ForecasterKind.FLATLINE:
            for t in tasks:
                s = history.get(t.location, empty)
                if sample:
                    out[t] = flatline_samples(s, t, p["history_diffs"], self.n_samples, p["seed"])
                else:
                    out[t] = flatline_forecast(s, t, p["history_diffs"], p["n_samples"], p["seed"])
        elif kind is ForecasterKind.CLIMATOLOGICAL:
            start = date.fromisoformat(p["start_date"]) if p["start_date"] else None
            kw = dict(window_halfwidth=p["window_halfwidth"], min_samples=p["min_samples"],
                      smoothing=p["smoothing"], start_date=start)
            for t in tasks:
                if sample:
                    out[t] = climatological_samples(history, self.locations, t, self.n_samples, **kw)
                else:
                    out[t] = climatological_forecast(history, self.locations, t, **kw)
        else:
            fits: dict[date, AR6Fit] = {}
            for t in tasks:
                if t.reference_date not in fits:
                    asof = {c: s.up_to(t.reference_date) for c, s in history.items()}
                    fits[t.reference_date] = ar6_pooled_fit(asof, p["epsilon"], p["epsilon_std"], bool(p["holiday"]))
                fit = fits[t.reference_date]
                s = history.get(t.location, empty)
                if sample:
                    out[t] = ar6_pooled_samples(fit, s, t, self.n_samples, p["seed"], p["noise_scale"])
                else:
                    out[t] = ar6_pooled_forecast(fit, s, t, p["n_trajectories"], p["seed"], p["noise_scale"])
        return out


def make_forecaster(config: ForecasterConfig, locations: LocationTable, n_samples: int = 1000) -> ConfiguredForecaster:
    return ConfiguredForecaster(config, locations, n_samples)


def default_config(kind: ForecasterKind | str) -> ForecasterConfig:
    return ForecasterConfig(ForecasterKind(kind))
