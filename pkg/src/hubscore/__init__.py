"""Scoring, ranking, ensembling and configuration search for quantile forecast hubs."""

from .core import (
    CANONICAL_LEVELS,
    HORIZONS,
    QUANTILE_LEVELS,
    DataError,
    Location,
    LocationTable,
    ObservationSeries,
    QuantileForecast,
    QuantileLevels,
    SampleForecast,
    TaskKey,
    build_task_space,
    lookup_truth,
)
from .scoring import (
    Metric,
    ScoreRecord,
    crps_samples,
    forecast_quality,
    interval_score,
    log_crps_samples,
    log_score_samples,
    log_wis,
    wis,
)

__version__ = "0.1.0"
