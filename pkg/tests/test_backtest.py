from datetime import date, timedelta

import numpy as np
import pytest

from hubscore.backtest import (
    EvaluationSplit,
    information_set,
    origins,
    rolling_score,
    rolling_task_scores,
    rolling_test_score,
    rolling_validation_score,
    selection_score,
)
from hubscore.core import DataError, TaskKey, lookup_truth
from hubscore.forecasters import ForecasterConfig, flatline_forecast, make_forecaster
from hubscore.scoring import wis

from .conftest import point_mass


def oracle_forecaster(truth):
    def forecaster(history, tasks, output="quantile"):
        return {t: point_mass(t, lookup_truth(truth[t.location], t)) for t in tasks}
    return forecaster


class RecordingFlatline:
    """Flat-line forecaster that remembers the last date it was shown."""

    def __init__(self):
        self.seen = {}

    def __call__(self, history, tasks, output="quantile"):
        out = {}
        for t in tasks:
            s = history[t.location]
            self.seen[t.reference_date] = s.end
            out[t] = flatline_forecast(s, t, n_samples=400)
        return out


class TestSplit:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            EvaluationSplit((("2024-01-06", "2024-03-02"),), ("2024-02-03", "2024-04-06"))

    def test_parses_strings(self):
        s = EvaluationSplit((("2024-01-06", "2024-01-20"),), ("2024-02-03", "2024-02-17"))
        assert s.validation[0][0] == date(2024, 1, 6)
        assert origins(s.validation) == [date(2024, 1, 6), date(2024, 1, 13), date(2024, 1, 20)]


def test_information_set_excludes_origin_week(history):
    origin = history["01"].dates[100]
    seen = information_set(history, origin)
    assert seen["01"].end == origin - timedelta(weeks=1)


def test_oracle_scores_zero(history):
    ranges = [(history["01"].dates[60], history["01"].dates[80])]
    assert rolling_score(oracle_forecaster(history), history, ranges) == 0.0


def test_single_origin_single_location(history):
    one = {"01": history["01"]}
    origin = one["01"].dates[120]
    f = RecordingFlatline()
    got = rolling_score(f, one, [(origin, origin)])
    seen = information_set(one, origin)["01"]
    manual = [wis(flatline_forecast(seen, TaskKey(origin, "01", h), n_samples=400),
                  lookup_truth(one["01"], TaskKey(origin, "01", h))) for h in range(4)]
    assert got == pytest.approx(np.mean(manual), rel=1e-12)
    assert f.seen[origin] < origin


def test_multi_origin_matches_loop(history, locations):
    f = make_forecaster(ForecasterConfig("flatline", {"n_samples": 300}), locations)
    dates = history["01"].dates
    ranges = [(dates[100], dates[104]), (dates[150], dates[152])]
    got = rolling_score(f, history, ranges)
    per = []
    for o in [*dates[100:105], *dates[150:153]]:
        seen = information_set(history, o)
        for code in sorted(history):
            for h in range(4):
                t = TaskKey(o, code, h)
                y = lookup_truth(history[code], t)
                if y is not None:
                    per.append(wis(flatline_forecast(seen[code], t, n_samples=300), y))
    assert got == pytest.approx(np.mean(per), rel=1e-12)


def test_split_wrappers(history, locations):
    d = history["01"].dates
    split = EvaluationSplit(((d[100], d[103]),), (d[110], d[112]))
    f = make_forecaster(ForecasterConfig("flatline", {"n_samples": 200}), locations)
    assert rolling_validation_score(f, history, split) == rolling_score(f, history, split.validation)
    assert rolling_test_score(f, history, split) == rolling_score(f, history, [split.retrospective_test])


def test_no_truth_raises(history):
    far = history["01"].end + timedelta(weeks=10)
    with pytest.raises(DataError):
        rolling_task_scores(oracle_forecaster(history), history, [(far, far)])


def test_sample_metric(history, locations):
    f = make_forecaster(ForecasterConfig("flatline"), locations, n_samples=300)
    d = history["01"].dates
    assert rolling_score(f, history, [(d[100], d[101])], metric="crps") > 0


class TestSelectionScore:
    def test_values(self):
        assert selection_score(0, 0) == 0
        assert selection_score(10, 5) == 20

    def test_equal_validation_prefers_lower_test(self):
        assert selection_score(3, 1) < selection_score(3, 2)

    def test_negative(self):
        with pytest.raises(ValueError):
            selection_score(-1, 0)
