"""Hub-format CSV reading and writing.

Submissions use the seven-column hub layout::

    reference_date,target,horizon,location,output_type,output_type_id,value

Reports are written with fixed column order, stable row order and fixed
decimal places so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .core import (
    HORIZONS,
    LEVEL_STRINGS,
    N_LEVELS,
    DataError,
    Location,
    LocationTable,
    ObservationSeries,
    QuantileForecast,
    TaskKey,
    canonical_level_index,
)
from .leaderboard import LeaderboardRow
from .scoring import Metric

log = logging.getLogger(__name__)

SUBMISSION_COLUMNS = ("reference_date", "target", "horizon", "location", "output_type", "output_type_id", "value")
NATURAL_SCALE = {Metric.WIS, Metric.CRPS, Metric.MAE, Metric.BIAS, Metric.CI50_WIDTH}


class SubmissionError(DataError):
    """A submission file failed validation; ``row`` is the 1-based line number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        self.message = message
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass
class SubmissionFile:
    model_id: str
    target: str
    forecasts: dict[TaskKey, QuantileForecast] = field(default_factory=dict)
    skipped_rows: int = 0

    def rows(self) -> list[tuple]:
        out = []
        for task in sorted(self.forecasts):
            values = self.forecasts[task].values
            for level, value in zip(LEVEL_STRINGS, values):
                out.append((task.reference_date, self.target, task.horizon, task.location, "quantile", level, value))
        return out


def _decode(data: bytes | str) -> str:
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise SubmissionError(f"file is not UTF-8: {exc}") from exc


def _reader(text: str, required: Sequence[str], error=DataError) -> csv.DictReader:
    reader = csv.DictReader(io.StringIO(text, newline=""))
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        if error is SubmissionError:
            raise SubmissionError(f"missing column(s): {', '.join(missing)}", row=1)
        raise error(f"missing column(s): {', '.join(missing)}")
    return reader


def _parse_date(text: str, row: int | None = None) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError as exc:
        raise SubmissionError(f"invalid date {text!r}", row) from exc


def parse_submission(data: bytes | str, model_id: str = "", target: str | None = None) -> SubmissionFile:
    """Parse and validate a quantile submission.

    Rows with another ``output_type`` or another ``target`` (when ``target`` is
    given) are skipped, as are horizon -1 nowcast rows. Without ``target`` all
    quantile rows must share one target.
    """
    reader = _reader(_decode(data), SUBMISSION_COLUMNS, SubmissionError)
    cells: dict[TaskKey, dict[int, tuple[float, int]]] = defaultdict(dict)
    first_row: dict[TaskKey, int] = {}
    chosen = target
    skipped = 0
    for line, rec in enumerate(reader, start=2):
        if (rec["output_type"] or "").strip() != "quantile":
            skipped += 1
            continue
        row_target = (rec["target"] or "").strip()
        if chosen is None:
            chosen = row_target
        elif row_target != chosen:
            if target is not None:
                skipped += 1
                continue
            raise SubmissionError(f"multiple targets ({chosen!r}, {row_target!r}); select one", line)
        try:
            horizon = int(rec["horizon"])
        except (TypeError, ValueError) as exc:
            raise SubmissionError(f"invalid horizon {rec['horizon']!r}", line) from exc
        if horizon < 0:
            skipped += 1
            continue
        if horizon not in HORIZONS:
            raise SubmissionError(f"horizon {horizon} outside {HORIZONS}", line)
        ref = _parse_date(rec["reference_date"], line)
        if rec.get("target_end_date"):
            end = _parse_date(rec["target_end_date"], line)
            if (end - ref).days != 7 * horizon:
                raise SubmissionError(f"target_end_date {end} inconsistent with horizon {horizon}", line)
        level = canonical_level_index(rec["output_type_id"] or "")
        if level is None:
            raise SubmissionError(f"non-canonical quantile level {rec['output_type_id']!r}", line)
        try:
            value = float(rec["value"])
        except (TypeError, ValueError) as exc:
            raise SubmissionError(f"non-numeric value {rec['value']!r}", line) from exc
        if not math.isfinite(value):
            raise SubmissionError(f"non-finite value {rec['value']!r}", line)
        if value < 0:
            raise SubmissionError("negative count", line)
        task = TaskKey(ref, (rec["location"] or "").strip(), horizon)
        if level in cells[task]:
            raise SubmissionError(f"duplicate task-level row for {task} level {LEVEL_STRINGS[level]}", line)
        cells[task][level] = (value, line)
        first_row.setdefault(task, line)

    forecasts = {}
    for task in sorted(cells):
        by_level = cells[task]
        if len(by_level) != N_LEVELS:
            raise SubmissionError(f"incomplete quantile set for {task} ({len(by_level)} of {N_LEVELS})", first_row[task])
        values = [by_level[i][0] for i in range(N_LEVELS)]
        for i in range(1, N_LEVELS):
            if values[i] < values[i - 1]:
                raise SubmissionError(f"quantile crossing at level {LEVEL_STRINGS[i]} for {task}", by_level[i][1])
        forecasts[task] = QuantileForecast(task, values)
    return SubmissionFile(model_id, chosen or "", forecasts, skipped)


def format_value(v: float) -> str:
    """Shortest round-tripping float text, without a trailing '.0'."""
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def _csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def emit_submission(sub: SubmissionFile) -> bytes:
    rows = (
        (ref.isoformat(), target, h, loc, otype, level, format_value(v))
        for ref, target, h, loc, otype, level, v in sub.rows()
    )
    return _csv_bytes(SUBMISSION_COLUMNS, rows)


def load_locations(data: bytes | str) -> LocationTable:
    """Location table with ``location``, ``location_name`` (or ``name``) and ``population``."""
    reader = _reader(_decode(data), ("location", "population"))
    out = []
    for line, rec in enumerate(reader, start=2):
        try:
            pop = int(float(rec["population"]))
        except (TypeError, ValueError) as exc:
            raise DataError(f"row {line}: invalid population {rec['population']!r}") from exc
        name = rec.get("location_name") or rec.get("name") or rec["location"]
        out.append(Location(rec["location"].strip(), name.strip(), pop))
    return LocationTable(out)


def _as_float(text: str | None) -> float | None:
    try:
        v = float(text)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) and v >= 0 else None


def interpolate_weekly(location: str, points: Mapping[date, float]) -> ObservationSeries:
    """Complete a weekly grid between the first and last observation by linear interpolation."""
    if not points:
        return ObservationSeries(location)
    observed = sorted(points)
    start = observed[0]
    for d in observed:
        if (d - start).days % 7:
            raise DataError(f"{location}: date {d} is off the weekly grid starting {start}")
    n = (observed[-1] - start).days // 7 + 1
    grid = [date.fromordinal(start.toordinal() + 7 * i) for i in range(n)]
    x_obs = np.array([d.toordinal() for d in observed], dtype=float)
    y_obs = np.array([points[d] for d in observed])
    values = np.interp([d.toordinal() for d in grid], x_obs, y_obs)
    flags = np.array([d not in points for d in grid])
    return ObservationSeries(location, tuple(grid), values, flags)


def load_target_series(data: bytes | str, locations: LocationTable) -> dict[str, ObservationSeries]:
    """Weekly target series per declared location.

    Accepts ``date``/``target_end_date`` and ``value``/``observation`` column names.
    Non-numeric or negative values count as missing; interior gaps are filled
    linearly, leading and trailing gaps are left out.
    """
    text = _decode(data)
    header = next(csv.reader(io.StringIO(text)), [])
    date_col = "date" if "date" in header else "target_end_date"
    value_col = "value" if "value" in header else "observation"
    reader = _reader(text, (date_col, "location", value_col))
    points: dict[str, dict[date, float]] = {code: {} for code in locations}
    seen: set[tuple[str, date]] = set()
    for line, rec in enumerate(reader, start=2):
        code = (rec["location"] or "").strip()
        if code not in locations:
            raise DataError(f"row {line}: unknown location {code!r}")
        try:
            d = date.fromisoformat(rec[date_col].strip())
        except (AttributeError, ValueError) as exc:
            raise DataError(f"row {line}: invalid date {rec[date_col]!r}") from exc
        if (code, d) in seen:
            raise DataError(f"row {line}: duplicate entry for {code} on {d}")
        seen.add((code, d))
        value = _as_float(rec[value_col])
        if value is not None:
            points[code][d] = value
    out = {}
    for code in locations:
        if not points[code]:
            log.warning("location %s has no observed values", code)
        out[code] = interpolate_weekly(code, points[code])
    return out


def emit_target_series(series: Mapping[str, ObservationSeries]) -> bytes:
    rows = []
    for code in sorted(series):
        s = series[code]
        for d, v in zip(s.dates, s.values):
            rows.append((d.isoformat(), code, format_value(v)))
    rows.sort()
    return _csv_bytes(("date", "location", "value"), rows)


def emit_locations(table: LocationTable) -> bytes:
    return _csv_bytes(
        ("location", "location_name", "population"),
        ((code, table[code].name, table[code].population) for code in sorted(table)),
    )


# -- reports -------------------------------------------------------------------


def fmt_score(value: float | None, metric: Metric | str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    places = 2 if Metric(metric) in NATURAL_SCALE else 4
    return f"{value:.{places}f}"


def fmt4(value: float | None) -> str:
    if value is None or math.isnan(value):
        return ""
    return f"{value:.4f}"


def emit_leaderboard(rows: Sequence[LeaderboardRow], metric: Metric | str, precise: bool = False) -> bytes:
    """Leaderboard CSV; ``precise`` writes round-tripping floats instead of fixed decimals."""
    m = Metric(metric).value
    ordered = sorted(rows, key=lambda r: (r.rank is None, r.rank or 0, r.model_id))

    def num(v, fixed):
        if precise:
            return "" if v is None or math.isnan(v) else format_value(v)
        return fixed(v)

    return _csv_bytes(
        ("rank", "model_id", "n_tasks", f"mean_{m}", f"relative_{m}", "eligible"),
        (
            ("" if r.rank is None else r.rank, r.model_id, r.n_tasks,
             num(r.mean_score, lambda v: fmt_score(v, metric)), num(r.pairwise_relative, fmt4),
             "true" if r.eligible else "false")
            for r in ordered
        ),
    )


def emit_ranks(ranks: Mapping[tuple[str, TaskKey], float]) -> bytes:
    rows = sorted(ranks.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    return _csv_bytes(
        ("reference_date", "location", "horizon", "model_id", "standardized_rank"),
        ((t.reference_date.isoformat(), t.location, t.horizon, m, fmt4(r)) for (m, t), r in rows),
    )


def emit_rank_summary(summary: Mapping[str, Mapping[str, float]]) -> bytes:
    ordered = sorted(summary.items(), key=lambda kv: (-kv[1]["median"], kv[0]))
    return _csv_bytes(
        ("model_id", "n_tasks", "mean_rank", "q25_rank", "median_rank", "q75_rank"),
        ((m, int(s["n"]), fmt4(s["mean"]), fmt4(s["q25"]), fmt4(s["median"]), fmt4(s["q75"])) for m, s in ordered),
    )


def emit_horizon_table(breakdown: Mapping[tuple[str, int], float], metric: Metric | str) -> bytes:
    models = sorted({m for m, _ in breakdown})
    return _csv_bytes(
        ("model_id", *(f"horizon_{h}" for h in HORIZONS)),
        ((m, *(fmt_score(breakdown.get((m, h)), metric) for h in HORIZONS)) for m in models),
    )


def emit_scores(scores: Mapping[str, Mapping[TaskKey, Mapping[Metric, float]]], metrics: Sequence[Metric]) -> bytes:
    """Per-task score rows, one column per metric; full precision for rescoring."""
    rows = []
    for model in sorted(scores):
        for task in sorted(scores[model]):
            vals = scores[model][task]
            rows.append((
                model, task.reference_date.isoformat(), task.location, task.horizon,
                task.target_end_date.isoformat(),
                *(format_value(vals[m]) if m in vals else "" for m in metrics),
            ))
    return _csv_bytes(
        ("model_id", "reference_date", "location", "horizon", "target_end_date", *(m.value for m in metrics)),
        rows,
    )


def emit_trajectory(nodes: Sequence, trajectory: Sequence[tuple[int, float]], timing: bool = True) -> bytes:
    """Search trajectory: one row per node in creation order."""
    by_id = {n.id: n for n in nodes}
    rows = []
    for node_id, best in trajectory:
        n = by_id[node_id]
        rows.append((
            n.id, "" if n.parent is None else n.parent, format_value(n.validation_score), format_value(best),
            "true" if n.gate_passed else "false", f"{n.wall_ms:.3f}" if timing else "",
        ))
    return _csv_bytes(("node_id", "parent_id", "score", "cumulative_best", "gate_passed", "wall_ms"), rows)


def emit_backtest(rows: Sequence[tuple[str, float, float, float]], metric: Metric | str) -> bytes:
    m = Metric(metric).value
    ordered = sorted(rows, key=lambda r: (r[3], r[0]))
    return _csv_bytes(
        ("model_id", f"validation_{m}", f"test_{m}", "selection_score"),
        ((name, fmt_score(v, metric), fmt_score(t, metric), fmt_score(s, metric)) for name, v, t, s in ordered),
    )
