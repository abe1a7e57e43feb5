import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diagrameval.errors import (
    EmptySeason,
    MalformedTrace,
    NonpositiveK,
    OutOfRange,
    UnfrozenSeason,
    WeightMismatch,
)
from diagrameval.scoring import (
    DEFAULT_WEIGHTS,
    EQUAL_WEIGHTS,
    MetricVector,
    ScoreRecord,
    SeasonParams,
    TraceLog,
    WeightProfile,
    base_score,
    break_even_steps,
    count_steps,
    dqs,
    dqs_delta,
    dqs_delta_surface,
    fit_season_params,
    format_table,
    saturation,
    summarize,
    summary_to_csv,
    summary_to_json,
)

unit = st.floats(0, 1)
TOP_ROW = dict(precision=0.92, recall=0.88, design=0.53, blank=0.84, readability=0.89, align=0.91)


def frozen(K, r):
    return SeasonParams(K, r).freeze()


def test_default_weighted_score():
    assert base_score(TOP_ROW) == pytest.approx(0.8215, abs=1e-12)


def test_equal_weighted_score():
    assert base_score(TOP_ROW, EQUAL_WEIGHTS) == pytest.approx(4.97 / 6, abs=1e-12)
    assert round(base_score(TOP_ROW, EQUAL_WEIGHTS), 3) == 0.828


def test_weights_must_sum_to_one():
    with pytest.raises(WeightMismatch):
        WeightProfile(0.2, 0.2, 0.2, 0.2, 0.2, 0.2)
    with pytest.raises(WeightMismatch):
        base_score(TOP_ROW, (0.2, 0.2, 0.2, 0.05, 0.25, 0.1))


def test_metrics_bound_by_name_not_position():
    shuffled = dict(reversed(list(TOP_ROW.items())))
    assert base_score(shuffled) == base_score(TOP_ROW)
    with pytest.raises(WeightMismatch):
        base_score({k: v for k, v in TOP_ROW.items() if k != "align"})
    with pytest.raises(OutOfRange):
        MetricVector(1.2, 0, 0, 0, 0, 0)


@given(st.tuples(unit, unit, unit, unit, unit, unit))
def test_base_score_bounded(m):
    s = base_score(MetricVector(*m))
    assert -1e-12 <= s <= 1 + 1e-12
    lo, hi = min(m), max(m)
    assert lo - 1e-12 <= s <= hi + 1e-12


def test_trace_counts_successful_drawing_steps():
    lines = [{"task_id": "t1"}]
    lines += [{"tool": "insert_shape", "status": "ok"}] * 5
    lines += [{"tool": "screenshot", "status": "ok"}] * 2
    lines += [{"tool": "insert_text", "status": "error"}]
    trace = TraceLog.from_jsonl("\n".join(json.dumps(x) for x in lines))
    assert trace.task_id == "t1"
    assert count_steps(trace) == 5
    assert count_steps(TraceLog()) == 0


def test_custom_step_whitelist():
    trace = TraceLog.from_records([{"tool": "screenshot"}, {"tool": "draw"}], step_tools={"draw"})
    assert count_steps(trace) == 1


@pytest.mark.parametrize("text", ["{not json", '{"status": "ok"}', '{"tool": "x", "status": "maybe"}'])
def test_malformed_trace(text):
    with pytest.raises(MalformedTrace):
        TraceLog.from_jsonl(text)


def test_saturation():
    assert saturation(29.83, 27.29) == pytest.approx(29.83 / 57.12)
    assert round(saturation(29.83, 27.29), 4) == 0.5222
    assert saturation(0, 5) == 0
    with pytest.raises(NonpositiveK):
        saturation(1, 0)


def test_dqs_spot_values():
    K = 27.29
    r = 1 - 0.7378
    assert dqs(0.82, 29.83, frozen(K, r)) == pytest.approx(0.845, abs=1e-3)
    assert dqs(0.5, 0, frozen(10, 0.3)) == pytest.approx(0.65)
    assert dqs(1.0, 1e9, frozen(10, 0.3)) == pytest.approx(1.0)


def test_dqs_requires_frozen_params():
    with pytest.raises(UnfrozenSeason):
        dqs(0.5, 3, SeasonParams(10, 0.2))
    with pytest.raises(OutOfRange):
        dqs(1.5, 3, frozen(10, 0.2))


def test_frozen_params_are_immutable():
    p = frozen(10, 0.2)
    with pytest.raises(UnfrozenSeason):
        p.K = 11
    assert p.freeze() is p and p.K == 10
    assert SeasonParams.from_dict(p.to_dict()) == p
    with pytest.raises(NonpositiveK):
        SeasonParams(0, 0.2)
    with pytest.raises(OutOfRange):
        SeasonParams(1, 1.5)


def test_delta_identity_on_grid():
    K, r = 27.3, 0.26
    s_grid = np.linspace(0, 1, 50)
    n_grid = np.linspace(0, 120, 50)
    params = frozen(K, r)
    surface = dqs_delta_surface(K, r, s_grid, n_grid)
    for i, s in enumerate(s_grid):
        for j, n in enumerate(n_grid):
            assert surface[i, j] == pytest.approx(dqs(s, n, params) - s, abs=1e-12)
            assert surface[i, j] == pytest.approx(dqs_delta(s, n, K, r), abs=1e-15)


@given(st.floats(0.01, 0.99), st.floats(1, 100), st.floats(0.01, 0.99))
def test_break_even_separates_reward_from_penalty(s, K, r):
    n0 = break_even_steps(s, K, r)
    assert dqs_delta(s, n0, K, r) == pytest.approx(0, abs=1e-9)
    assert dqs_delta(s, n0 * 0.9, K, r) > 0
    assert dqs_delta(s, n0 * 1.1 + 1e-6, K, r) < 0


def test_break_even_of_perfect_score_is_infinite():
    assert break_even_steps(1.0, 10, 0.2) == math.inf


def record(s, n, system="A", mode="T2I", dq=None, task="t"):
    m = MetricVector(s, s, s, s, s, s)
    return ScoreRecord(task, mode, m, n, s, dq, system)


def test_fit_season_params():
    params = fit_season_params([record(0.6, 10), record(0.8, 30)], season_id="S1", mode="T2I")
    assert params.frozen and params.K == 20 and params.r == pytest.approx(0.3)
    with pytest.raises(EmptySeason):
        fit_season_params([])


def test_record_round_trip():
    rec = ScoreRecord("t9", "TI2I", MetricVector(**TOP_ROW), 12, 0.8215, 0.83, "sysA", "default", "S1", {"sha": "x"})
    back = ScoreRecord.from_dict(json.loads(rec.to_json()))
    assert back == rec
    d = rec.to_dict()
    assert d["schema_version"] == 1 and "tool_version" in d
    with pytest.raises(ValueError):
        record(0.5, 1, mode="XYZ")


def test_summary_means_and_ranking():
    recs = [
        record(0.6, 10, "A", dq=0.6), record(0.8, 20, "A", dq=0.8),
        record(0.9, 5, "B", dq=0.95),
        record(0.5, 5, "A", "TI2I", dq=0.5),
    ]
    rows = summarize(recs)
    assert [(r["system"], r["mode"]) for r in rows] == [("B", "T2I"), ("A", "T2I"), ("A", "TI2I")]
    a = rows[1]
    assert a["tasks"] == 2 and a["steps"] == 15 and a["score"] == pytest.approx(0.7) and a["dqs"] == pytest.approx(0.7)
    csv_text = summary_to_csv(rows)
    assert csv_text.startswith("# diagrameval") and "system,mode,tasks" in csv_text
    assert json.loads(summary_to_json(rows))["rows"][0]["system"] == "B"
    assert "B" in format_table(rows).splitlines()[2]


def test_default_profile_values():
    assert DEFAULT_WEIGHTS.as_dict() == {
        "precision": 0.20, "recall": 0.20, "design": 0.20, "blank": 0.05, "readability": 0.25, "align": 0.10,
    }
