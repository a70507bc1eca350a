"""Proper scoring rules for quantile and sample forecasts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import (
    CANONICAL_LEVELS,
    DataError,
    QuantileCrossingError,
    QuantileForecast,
    QuantileLevels,
    SampleForecast,
    TaskKey,
    as_values,
)

LOG_SCORE_CAP = 500.0
_MIN_BANDWIDTH = 1e-6


class Metric(str, enum.Enum):
    WIS = "wis"
    LOG_WIS = "logwis"
    CRPS = "crps"
    LOG_CRPS = "logcrps"
    LOG_SCORE = "logscore"
    MAE = "mae"
    BIAS = "bias"
    CI50_WIDTH = "ci50_width"

    @property
    def needs_samples(self) -> bool:
        return self in (Metric.CRPS, Metric.LOG_CRPS, Metric.LOG_SCORE)

    @property
    def log_scale(self) -> bool:
        return self in (Metric.LOG_WIS, Metric.LOG_CRPS, Metric.LOG_SCORE)


@dataclass(frozen=True)
class ScoreRecord:
    model_id: str
    task: TaskKey
    metric: Metric
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "metric", Metric(self.metric))
        if not math.isfinite(self.value):
            raise DataError(f"{self.model_id} {self.task}: non-finite {self.metric.value} score")
        if self.metric in (Metric.WIS, Metric.LOG_WIS, Metric.CRPS, Metric.LOG_CRPS) and self.value < 0:
            raise DataError(f"{self.metric.value} must be non-negative")


def interval_score(lower: float, upper: float, alpha: float, y: float) -> float:
    if lower > upper:
        raise DataError("inverted interval")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    score = upper - lower
    if y < lower:
        score += 2.0 / alpha * (lower - y)
    elif y > upper:
        score += 2.0 / alpha * (y - upper)
    return score


def weighted_interval_score(quantiles, y: float, levels: QuantileLevels = CANONICAL_LEVELS) -> float:
    """WIS of quantile values at symmetric ``levels`` against observation ``y``.

    Uses weights 1/2 on the absolute error of the median and alpha/2 on each
    central interval score, normalized by (K + 1/2) for K intervals.
    """
    q = np.asarray(quantiles, dtype=float)
    if q.shape != (len(levels),):
        raise DataError(f"expected {len(levels)} quantiles, got shape {q.shape}")
    if np.any(np.diff(q) < 0):
        raise QuantileCrossingError()
    k = levels.median_index
    lower, upper = q[:k], q[::-1][:k]
    alphas = levels.alphas
    widths = upper - lower
    under = np.where(y < lower, (2.0 / alphas) * (lower - y), 0.0)
    over = np.where(y > upper, (2.0 / alphas) * (y - upper), 0.0)
    interval = widths + under + over
    total = 0.5 * abs(y - q[k]) + np.sum(alphas / 2.0 * interval)
    return float(total / (k + 0.5))


def wis(forecast: QuantileForecast | np.ndarray, y: float) -> float:
    return weighted_interval_score(as_values(forecast), y)


def _check_counts(values: np.ndarray, y: float) -> None:
    if y < 0 or np.any(values < 0):
        raise DataError("negative count")


def log_wis(forecast: QuantileForecast | np.ndarray, y: float) -> float:
    q = as_values(forecast)
    _check_counts(q, y)
    return weighted_interval_score(np.log1p(q), math.log1p(y))


def crps_samples(forecast: SampleForecast | np.ndarray, y: float) -> float:
    """Energy-form CRPS estimate: mean|X - y| - sum_ij |X_i - X_j| / (2 N^2)."""
    x = np.sort(as_values(forecast))
    n = x.size
    if n < 2:
        raise DataError("sample forecast needs at least 2 samples")
    # sum_ij |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i) over sorted samples
    ranks = np.arange(1, n + 1)
    pair_sum = 2.0 * np.dot(2 * ranks - n - 1, x)
    value = np.mean(np.abs(x - y)) - pair_sum / (2.0 * n * n)
    return float(max(value, 0.0))


def log_crps_samples(forecast: SampleForecast | np.ndarray, y: float) -> float:
    x = as_values(forecast)
    _check_counts(x, y)
    return crps_samples(np.log1p(x), math.log1p(y))


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = float(np.std(x, ddof=1))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def log_score_samples(
    forecast: SampleForecast | np.ndarray,
    y: float,
    bandwidth: float | None = None,
    cap: float = LOG_SCORE_CAP,
) -> float:
    """Negative log of a Gaussian KDE at ``y``, capped at ``cap``.

    ``bandwidth=None`` selects Silverman's rule of thumb. Degenerate samples fall
    back to a tiny bandwidth so a far-away observation hits the cap.
    """
    x = as_values(forecast)
    if x.size < 2:
        raise DataError("sample forecast needs at least 2 samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if h <= 0:
        if bandwidth is not None:
            raise ValueError("bandwidth must be positive")
        h = _MIN_BANDWIDTH
    h = max(h, _MIN_BANDWIDTH)
    z = (y - x) / h
    log_density = logsumexp(-0.5 * z * z) - math.log(x.size) - math.log(h * math.sqrt(2 * math.pi))
    return float(min(-log_density, cap))


@dataclass(frozen=True)
class ForecastQuality:
    bias: float
    under: bool
    over: bool
    ci50_width: float
    abs_err: float


def forecast_quality(forecast: QuantileForecast | np.ndarray, y: float) -> ForecastQuality:
    q = as_values(forecast)
    m = float(q[CANONICAL_LEVELS.median_index])
    return ForecastQuality(
        bias=m - y,
        under=m < y,
        over=m > y,
        ci50_width=float(q[CANONICAL_LEVELS.index_of("0.75")] - q[CANONICAL_LEVELS.index_of("0.25")]),
        abs_err=abs(m - y),
    )


def score_forecast(forecast, y: float, metric: Metric | str) -> float:
    """Dispatch one metric; sample metrics need a SampleForecast."""
    metric = Metric(metric)
    if metric is Metric.WIS:
        return wis(forecast, y)
    if metric is Metric.LOG_WIS:
        return log_wis(forecast, y)
    if metric is Metric.CRPS:
        return crps_samples(forecast, y)
    if metric is Metric.LOG_CRPS:
        return log_crps_samples(forecast, y)
    if metric is Metric.LOG_SCORE:
        return log_score_samples(forecast, y)
    quality = forecast_quality(forecast, y)
    return {Metric.MAE: quality.abs_err, Metric.BIAS: quality.bias, Metric.CI50_WIDTH: quality.ci50_width}[metric]
