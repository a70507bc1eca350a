"""Command-line front end.

Settings come from an INI-style config file (``--config``) with sections
``paths``, ``scoring``, ``split``, ``ensemble``, ``backtest`` and ``search``;
every key can be overridden by a flag of the same name.

Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from collections import defaultdict
from collections.abc import Sequence
from datetime import date
from pathlib import Path

from .backtest import EvaluationSplit, rolling_test_score, rolling_validation_score, selection_score
from .core import (
    DataError,
    LocationTable,
    ObservationSeries,
    QuantileForecast,
    TaskKey,
    build_task_space,
    lookup_truth,
)
from .ensemble import Combiner, EnsembleSpec, combine_all
from .forecasters import ForecasterConfig, ForecasterKind, make_forecaster
from .hubio import (
    SubmissionFile,
    emit_backtest,
    emit_horizon_table,
    emit_leaderboard,
    emit_rank_summary,
    emit_ranks,
    emit_scores,
    emit_submission,
    emit_trajectory,
    load_locations,
    load_target_series,
    parse_submission,
)
from .leaderboard import ScoreTable, horizon_breakdown, leaderboard, rank_summary, standardized_ranks
from .scoring import Metric, score_forecast
from .search import Budget, ConfigMutator, always_pass, default_root, run_search, select_final_node

log = logging.getLogger("hubscore")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

# key -> (section, default); defaults of None mean "required by the commands that use it"
SETTINGS: dict[str, tuple[str, str | None]] = {
    "targets": ("paths", None),
    "submissions": ("paths", None),
    "locations": ("paths", None),
    "out": ("paths", "out"),
    "metric": ("scoring", "logwis"),
    "threshold": ("scoring", "0.8"),
    "baseline": ("scoring", None),
    "target": ("scoring", ""),
    "validation": ("split", None),
    "test": ("split", None),
    "prospective": ("split", ""),
    "members": ("ensemble", ""),
    "combiner": ("ensemble", "mean"),
    "min_members": ("ensemble", ""),
    "name": ("ensemble", "ensemble"),
    "models": ("backtest", "flatline,climatological,ar6_pooled"),
    "kind": ("search", "ar6_pooled"),
    "max_nodes": ("search", "50"),
    "max_runtime": ("search", "3600"),
    "seed": ("search", "0"),
    "exploration": ("search", "1.0"),
    "penalty": ("search", "1000"),
    "gate": ("search", "pass"),
    "switch_kind_prob": ("search", "0.0"),
    "timing": ("search", "false"),
}

QUANTILE_METRICS = (Metric.WIS, Metric.LOG_WIS, Metric.MAE, Metric.BIAS, Metric.CI50_WIDTH)


class UsageError(Exception):
    pass


class RunConfig:
    """Resolved settings: flag > config file > default."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    @classmethod
    def load(cls, path: str | None, overrides: dict[str, str | None]) -> RunConfig:
        values = {k: d for k, (_, d) in SETTINGS.items() if d is not None}
        if path:
            parser = configparser.ConfigParser()
            if not parser.read(path, encoding="utf-8"):
                raise UsageError(f"cannot read config file {path}")
            for key, (section, _) in SETTINGS.items():
                if parser.has_option(section, key):
                    values[key] = parser.get(section, key).strip()
            known = {s for s, _ in SETTINGS.values()}
            for section in parser.sections():
                if section not in known:
                    raise UsageError(f"unknown config section [{section}]")
                for key in parser.options(section):
                    if SETTINGS.get(key, (None,))[0] != section:
                        raise UsageError(f"unknown key {key!r} in [{section}]")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(values)

    def get(self, key: str) -> str:
        if key not in self.values or self.values[key] == "" and SETTINGS[key][1] is None:
            raise UsageError(f"missing setting {key!r} (config [{SETTINGS[key][0]}] or --{key})")
        return self.values[key]

    def path(self, key: str, must_exist: bool = True) -> Path:
        p = Path(self.get(key))
        if must_exist and not p.exists():
            raise UsageError(f"{key} path does not exist: {p}")
        return p

    def metric(self) -> Metric:
        try:
            return Metric(self.get("metric"))
        except ValueError as exc:
            raise UsageError(f"unknown metric {self.get('metric')!r}") from exc

    def out_dir(self) -> Path:
        out = Path(self.get("out"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def split(self) -> EvaluationSplit:
        def rng(text: str) -> tuple[date, date]:
            try:
                a, b = text.split(":")
                return date.fromisoformat(a.strip()), date.fromisoformat(b.strip())
            except ValueError as exc:
                raise UsageError(f"bad date range {text!r}; expected START:END") from exc

        validation = tuple(rng(t) for t in self.get("validation").split(",") if t.strip())
        prospective = rng(self.values["prospective"]) if self.values.get("prospective") else None
        try:
            return EvaluationSplit(validation, rng(self.get("test")), prospective)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


# -- loading -------------------------------------------------------------------


def _load_truth(cfg: RunConfig) -> tuple[LocationTable, dict[str, ObservationSeries]]:
    locations = load_locations(cfg.path("locations").read_bytes())
    return locations, load_target_series(cfg.path("targets").read_bytes(), locations)


def _submission_files(root: Path) -> dict[str, list[Path]]:
    """Model id -> files: one subdirectory per model, or one CSV per model."""
    found: dict[str, list[Path]] = defaultdict(list)
    for p in sorted(root.iterdir()):
        if p.is_dir():
            found[p.name].extend(sorted(p.glob("*.csv")))
        elif p.suffix == ".csv":
            found[p.stem].append(p)
    return dict(found)


def _load_submissions(cfg: RunConfig) -> dict[str, dict[TaskKey, QuantileForecast]]:
    target = cfg.values.get("target") or None
    out: dict[str, dict[TaskKey, QuantileForecast]] = {}
    targets_seen: set[str] = set()
    for model, files in _submission_files(cfg.path("submissions")).items():
        merged: dict[TaskKey, QuantileForecast] = {}
        for f in files:
            try:
                sub = parse_submission(f.read_bytes(), model, target)
            except DataError as exc:
                raise DataError(f"{f}: {exc}") from exc
            if sub.forecasts:
                targets_seen.add(sub.target)
            dup = merged.keys() & sub.forecasts.keys()
            if dup:
                raise DataError(f"{f}: task {min(dup)} already submitted by {model}")
            merged.update(sub.forecasts)
        out[model] = merged
    if len(targets_seen) > 1:
        raise DataError(f"submissions mix targets {sorted(targets_seen)}; set --target")
    return out


def _score_all(subs, truth, metrics) -> dict[str, dict[TaskKey, dict[Metric, float]]]:
    out: dict[str, dict[TaskKey, dict[Metric, float]]] = {}
    for model, forecasts in subs.items():
        per_task = {}
        for task, fc in forecasts.items():
            series = truth.get(task.location)
            y = lookup_truth(series, task) if series is not None else None
            if y is not None:
                per_task[task] = {m: score_forecast(fc, y, m) for m in metrics}
        out[model] = per_task
    return out


def _quantile_metric(cfg: RunConfig) -> Metric:
    metric = cfg.metric()
    if metric.needs_samples:
        raise UsageError(f"metric {metric.value} needs sample forecasts; hub submissions carry quantiles")
    return metric


def scorable_task_space(subs, locations: LocationTable, truth) -> list[TaskKey]:
    """Submitted reference dates x declared locations x horizons, where truth exists."""
    dates = sorted({t.reference_date for forecasts in subs.values() for t in forecasts})
    if not dates:
        return []
    space = build_task_space(dates, list(locations))
    return [t for t in space if t.location in truth and lookup_truth(truth[t.location], t) is not None]


def _score_table(cfg: RunConfig, metric: Metric) -> tuple[ScoreTable, list[TaskKey]]:
    locations, truth = _load_truth(cfg)
    subs = _load_submissions(cfg)
    scores = _score_all(subs, truth, [metric])
    table = ScoreTable()
    for model, per_task in scores.items():
        for task, vals in per_task.items():
            table.add_score(model, task, metric, vals[metric])
    return table, scorable_task_space(subs, locations, truth)


def _write(out: Path, name: str, data: bytes) -> None:
    (out / name).write_bytes(data)
    log.info("wrote %s", out / name)


# -- commands ------------------------------------------------------------------


def cmd_validate(paths: Sequence[str], target: str | None = None) -> int:
    status = EXIT_OK
    for p in paths:
        try:
            sub = parse_submission(Path(p).read_bytes(), Path(p).stem, target)
            print(f"ok\t{p}\ttasks={len(sub.forecasts)}", file=sys.stderr)
        except (OSError, DataError) as exc:
            row = getattr(exc, "row", None)
            msg = getattr(exc, "message", str(exc))
            print(f"error\t{p}\trow={'' if row is None else row}\t{msg}", file=sys.stderr)
            status = EXIT_DATA
    return status


def cmd_score(cfg: RunConfig) -> int:
    _quantile_metric(cfg)
    _, truth = _load_truth(cfg)
    scores = _score_all(_load_submissions(cfg), truth, QUANTILE_METRICS)
    _write(cfg.out_dir(), "scores.csv", emit_scores(scores, QUANTILE_METRICS))
    return EXIT_OK


def cmd_leaderboard(cfg: RunConfig) -> int:
    metric = _quantile_metric(cfg)
    table, space = _score_table(cfg, metric)
    if not space:
        raise DataError("no scorable tasks")
    rows = leaderboard(table, space, metric, cfg.get("baseline"), float(cfg.get("threshold")))
    out = cfg.out_dir()
    _write(out, "leaderboard.csv", emit_leaderboard(rows, metric))
    _write(out, "leaderboard_full.csv", emit_leaderboard(rows, metric, precise=True))
    _write(out, f"horizon_{metric.value}.csv", emit_horizon_table(horizon_breakdown(table, metric), metric))
    return EXIT_OK


def cmd_ranks(cfg: RunConfig) -> int:
    metric = _quantile_metric(cfg)
    ranks = standardized_ranks(_score_table(cfg, metric)[0], metric)
    out = cfg.out_dir()
    _write(out, "ranks.csv", emit_ranks(ranks))
    _write(out, "rank_summary.csv", emit_rank_summary(rank_summary(ranks)))
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig) -> int:
    subs = _load_submissions(cfg)
    members = [m.strip() for m in cfg.values.get("members", "").split(",") if m.strip()] or sorted(subs)
    unknown = [m for m in members if m not in subs]
    if unknown:
        raise DataError(f"unknown ensemble members: {', '.join(unknown)}")
    min_members = int(cfg.values["min_members"]) if cfg.values.get("min_members") else None
    try:
        spec = EnsembleSpec(tuple(members), Combiner(cfg.get("combiner")), min_members)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    combined = combine_all(spec, subs)
    target = cfg.values.get("target") or _first_target(cfg)
    data = emit_submission(SubmissionFile(cfg.get("name"), target, combined))
    parse_submission(data)  # never write a file our own parser rejects
    _write(cfg.out_dir(), f"{cfg.get('name')}.csv", data)
    return EXIT_OK


def _first_target(cfg: RunConfig) -> str:
    for files in _submission_files(cfg.path("submissions")).values():
        for f in files:
            sub = parse_submission(f.read_bytes())
            if sub.target:
                return sub.target
    return ""


def _forecaster_configs(cfg: RunConfig) -> list[ForecasterConfig]:
    try:
        return [ForecasterConfig(ForecasterKind(k.strip())) for k in cfg.get("models").split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_backtest(cfg: RunConfig) -> int:
    metric = cfg.metric()
    split = cfg.split()
    locations, truth = _load_truth(cfg)
    rows = []
    for config in _forecaster_configs(cfg):
        fc = make_forecaster(config, locations)
        v = rolling_validation_score(fc, truth, split, metric)
        t = rolling_test_score(fc, truth, split, metric)
        rows.append((config.kind.value, v, t, selection_score(v, t)))
    _write(cfg.out_dir(), "backtest.csv", emit_backtest(rows, metric))
    return EXIT_OK


def _gate(spec: str, root_kind: ForecasterKind):
    if spec == "pass":
        return always_pass
    if spec == "reject":
        return lambda config: False
    if spec == "kind":
        # fidelity gate: children must stay the requested method
        return lambda config: config.kind is root_kind
    raise UsageError(f"unknown gate {spec!r}; expected pass, reject or kind")


def cmd_search(cfg: RunConfig) -> int:
    metric = cfg.metric()
    split = cfg.split()
    locations, truth = _load_truth(cfg)
    try:
        root = default_root(cfg.get("kind"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    budget = Budget(int(cfg.get("max_nodes")), float(cfg.get("max_runtime")))
    penalty = float(cfg.get("penalty"))

    def evaluator(config):
        return rolling_validation_score(make_forecaster(config, locations), truth, split, metric)

    def test_evaluator(config):
        return rolling_test_score(make_forecaster(config, locations), truth, split, metric)

    result = run_search(
        root,
        ConfigMutator(float(cfg.get("switch_kind_prob"))),
        evaluator,
        budget,
        gate=_gate(cfg.get("gate"), root.kind),
        exploration_constant=float(cfg.get("exploration")),
        seed=int(cfg.get("seed")),
        penalty=penalty,
    )
    final = select_final_node(result.tree, test_evaluator, penalty)
    out = cfg.out_dir()
    timing = cfg.get("timing").lower() in ("1", "true", "yes")
    _write(out, "trajectory.csv", emit_trajectory(result.tree.nodes, result.trajectory, timing))
    header = (
        f"# node {final.id}: validation {final.validation_score!r}, test {final.test_score!r}, "
        f"selection {selection_score(final.validation_score, final.test_score)!r}\n"
    )
    _write(out, "best_config.ini", (header + "[forecaster]\n" + final.config.to_text()).encode())
    return EXIT_OK


COMMANDS = {
    "score": cmd_score,
    "leaderboard": cmd_leaderboard,
    "ranks": cmd_ranks,
    "ensemble": cmd_ensemble,
    "backtest": cmd_backtest,
    "search": cmd_search,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hubscore", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("validate", help="check submission files")
    v.add_argument("paths", nargs="+")
    v.add_argument("--target", default=None)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} step")
        p.add_argument("--config")
        for key in SETTINGS:
            p.add_argument(f"--{key}", dest=key, default=None)
    return parser


def _cause_chain(exc: BaseException) -> str:
    parts: list[str] = []
    while exc is not None:
        text = str(exc) or type(exc).__name__
        if not parts or text not in parts[-1]:
            parts.append(text)
        exc = exc.__cause__
    return ": ".join(parts)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            return cmd_validate(args.paths, args.target)
        cfg = RunConfig.load(args.config, {k: getattr(args, k) for k in SETTINGS})
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {_cause_chain(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {_cause_chain(exc)}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {_cause_chain(exc)}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
