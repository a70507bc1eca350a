"""Domain types shared across the package: locations, tasks, forecasts, observations."""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal

import numpy as np

HORIZONS: tuple[int, ...] = (0, 1, 2, 3)
WEEK = timedelta(days=7)

# Hub level strings; matching is done on decimals so "0.10" == "0.1".
LEVEL_STRINGS: tuple[str, ...] = (
    "0.01", "0.025", "0.05", "0.1", "0.15", "0.2", "0.25", "0.3", "0.35", "0.4",
    "0.45", "0.5", "0.55", "0.6", "0.65", "0.7", "0.75", "0.8", "0.85", "0.9",
    "0.95", "0.975", "0.99",
)
_LEVEL_BY_DECIMAL = {Decimal(s): i for i, s in enumerate(LEVEL_STRINGS)}


class DataError(ValueError):
    """Input data violates a domain invariant."""


class QuantileCrossingError(DataError):
    def __init__(self, message: str = "quantile crossing", index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class QuantileLevels:
    """An odd-length, strictly increasing set of probabilities symmetric about 0.5."""

    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels, dtype=float)
        if lv.ndim != 1 or len(lv) % 2 == 0:
            raise ValueError("quantile levels must be an odd-length vector")
        if np.any(lv <= 0) or np.any(lv >= 1):
            raise ValueError("quantile levels must lie in (0, 1)")
        if np.any(np.diff(lv) <= 0):
            raise ValueError("quantile levels must be strictly increasing")
        if not np.allclose(lv + lv[::-1], 1.0, atol=1e-12, rtol=0):
            raise ValueError("quantile levels must be symmetric about 0.5")
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.levels)

    @property
    def median_index(self) -> int:
        return len(self.levels) // 2

    @property
    def alphas(self) -> np.ndarray:
        """Central-interval alphas, widest interval first."""
        return 2.0 * self.array[: self.median_index]

    def index_of(self, level: float | str) -> int:
        if isinstance(level, str):
            return _LEVEL_BY_DECIMAL[Decimal(level)]
        return self.levels.index(level)


CANONICAL_LEVELS = QuantileLevels(tuple(float(s) for s in LEVEL_STRINGS))
QUANTILE_LEVELS: tuple[float, ...] = CANONICAL_LEVELS.levels
MEDIAN_INDEX = CANONICAL_LEVELS.median_index
N_LEVELS = len(QUANTILE_LEVELS)


def canonical_level_index(text: str) -> int | None:
    """Index of a decimal level string in the canonical set, or None."""
    try:
        return _LEVEL_BY_DECIMAL.get(Decimal(text.strip()))
    except ArithmeticError:
        return None


@dataclass(frozen=True)
class Location:
    code: str
    name: str
    population: int

    def __post_init__(self) -> None:
        if self.population <= 0:
            raise DataError(f"location {self.code}: population must be positive")


class LocationTable(Mapping[str, Location]):
    """Locations keyed by code; codes are unique."""

    def __init__(self, locations: Iterable[Location] = ()):
        self._by_code: dict[str, Location] = {}
        for loc in locations:
            if loc.code in self._by_code:
                raise DataError(f"duplicate location code {loc.code!r}")
            self._by_code[loc.code] = loc

    def __getitem__(self, code: str) -> Location:
        return self._by_code[code]

    def __iter__(self) -> Iterator[str]:
        return iter(self._by_code)

    def __len__(self) -> int:
        return len(self._by_code)

    def __repr__(self) -> str:
        return f"LocationTable({list(self._by_code)!r})"


@dataclass(frozen=True, order=True)
class TaskKey:
    reference_date: date
    location: str
    horizon: int

    def __post_init__(self) -> None:
        if self.horizon not in HORIZONS:
            raise DataError(f"horizon {self.horizon} outside {HORIZONS}")

    @property
    def target_end_date(self) -> date:
        return self.reference_date + self.horizon * WEEK


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class QuantileForecast:
    task: TaskKey
    values: np.ndarray

    def __post_init__(self) -> None:
        v = _frozen_array(self.values)
        if v.shape != (N_LEVELS,):
            raise DataError(f"expected {N_LEVELS} quantile values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("quantile values must be finite")
        if np.any(v < 0):
            raise DataError("negative count")
        bad = np.flatnonzero(np.diff(v) < 0)
        if bad.size:
            raise QuantileCrossingError(index=int(bad[0]) + 1)
        object.__setattr__(self, "values", v)

    @property
    def median(self) -> float:
        return float(self.values[MEDIAN_INDEX])

    def quantile(self, level: float | str) -> float:
        return float(self.values[CANONICAL_LEVELS.index_of(level)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantileForecast):
            return NotImplemented
        return self.task == other.task and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class SampleForecast:
    task: TaskKey | None
    samples: np.ndarray

    def __post_init__(self) -> None:
        s = _frozen_array(self.samples)
        if s.ndim != 1 or s.size < 2:
            raise DataError("sample forecast needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise DataError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True, eq=False)
class ObservationSeries:
    """Weekly counts for one location. ``interpolated[i]`` marks filled gaps."""

    location: str
    dates: tuple[date, ...] = ()
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    interpolated: np.ndarray | None = None

    def __post_init__(self) -> None:
        dates = tuple(self.dates)
        values = _frozen_array(self.values)
        flags = np.zeros(len(dates), dtype=bool) if self.interpolated is None else self.interpolated
        flags = _frozen_array(flags, dtype=bool)
        if values.shape != (len(dates),) or flags.shape != (len(dates),):
            raise DataError(f"{self.location}: dates, values and flags differ in length")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise DataError(f"{self.location}: values must be finite and non-negative")
        for a, b in itertools.pairwise(dates):
            if b - a != WEEK:
                raise DataError(f"{self.location}: dates {a} -> {b} are not 7 days apart")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "interpolated", flags)

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def start(self) -> date | None:
        return self.dates[0] if self.dates else None

    @property
    def end(self) -> date | None:
        return self.dates[-1] if self.dates else None

    def _index(self, d: date) -> int | None:
        if not self.dates:
            return None
        offset = (d - self.dates[0]).days
        if offset < 0 or offset % 7:
            return None
        i = offset // 7
        return i if i < len(self.dates) else None

    def value_at(self, d: date) -> float | None:
        i = self._index(d)
        return None if i is None else float(self.values[i])

    def is_interpolated(self, d: date) -> bool | None:
        i = self._index(d)
        return None if i is None else bool(self.interpolated[i])

    def up_to(self, d: date, inclusive: bool = True) -> ObservationSeries:
        """Prefix of the series dated on/before ``d`` (strictly before if not inclusive)."""
        n = sum(1 for x in self.dates if (x <= d if inclusive else x < d))
        return ObservationSeries(self.location, self.dates[:n], self.values[:n], self.interpolated[:n])


def lookup_truth(series: ObservationSeries, task: TaskKey) -> float | None:
    """Observed (or interpolated) value at the task's target week; None if unscorable."""
    return series.value_at(task.target_end_date)


def build_task_space(
    reference_dates: Iterable[date],
    locations: Iterable[Location | str],
    horizons: Iterable[int] = HORIZONS,
) -> list[TaskKey]:
    dates = sorted(set(reference_dates))
    codes = sorted({loc.code if isinstance(loc, Location) else loc for loc in locations})
    hs = sorted(set(horizons))
    if not dates or not codes or not hs:
        raise DataError("empty task-space axis")
    if not set(hs) <= set(HORIZONS):
        raise DataError(f"horizons must be a subset of {HORIZONS}")
    return [TaskKey(d, c, h) for d, c, h in itertools.product(dates, codes, hs)]


def _mmwr_week1_start(year: int) -> date:
    jan4 = date(year, 1, 4)
    return jan4 - timedelta(days=(jan4.weekday() + 1) % 7)


def epiweek(d: date) -> tuple[int, int]:
    """MMWR (year, week) of the Sunday-to-Saturday week containing ``d``."""
    sunday = d - timedelta(days=(d.weekday() + 1) % 7)
    for year in (sunday.year + 1, sunday.year, sunday.year - 1):
        start = _mmwr_week1_start(year)
        if sunday >= start:
            return year, (sunday - start).days // 7 + 1
    raise AssertionError("unreachable")


def weekly_dates(start: date, end: date) -> list[date]:
    """``start``, ``start + 7d``, ... up to and including ``end``."""
    out = []
    d = start
    while d <= end:
        out.append(d)
        d += WEEK
    return out


def as_values(forecast: QuantileForecast | SampleForecast | Sequence[float] | np.ndarray) -> np.ndarray:
    if isinstance(forecast, QuantileForecast):
        return forecast.values
    if isinstance(forecast, SampleForecast):
        return forecast.samples
    return np.asarray(forecast, dtype=float)
