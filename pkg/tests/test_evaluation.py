import json
import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swe_attention import data as D
from swe_attention.evaluation import (CoverageError, bin_nse, build_report,
                                      elevation_group_medians, evaluate_locations,
                                      format_summary, nse, relative_model_performance,
                                      report_summary, rmp_grid, write_report)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# ---------------------------------------------------------------- nse

def test_nse_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert nse(a, a) == 1.0
    assert nse(a, np.full(3, 2.0)) == 0.0
    assert nse(a, [1.0, 1.0, 3.0]) == 0.5


def test_nse_constant_actual_is_undefined():
    assert math.isnan(nse([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]))


def test_nse_contract_errors():
    with pytest.raises(ValueError):
        nse([1.0], [1.0])
    with pytest.raises(ValueError):
        nse([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=30), finite)
def test_nse_joint_shift_invariance(pairs, c):
    a = np.array([p[0] for p in pairs])
    p = np.array([q[1] for q in pairs])
    if np.ptp(a) < 1e-3:
        return
    assert nse(a + c, p + c) == pytest.approx(nse(a, p), rel=1e-6, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=3, max_size=20), st.integers(0, 19), st.floats(0.1, 50))
def test_nse_decreases_when_a_prediction_moves_away(actual, k, delta):
    a = np.array(actual)
    if np.ptp(a) < 1e-3:
        return
    k %= a.size
    p = a.copy()
    p[k] += 1.0
    moved = p.copy()
    moved[k] += delta
    assert nse(a, moved) < nse(a, p) <= 1.0


# ---------------------------------------------------------------- bins

def test_bin_examples():
    assert bin_nse([1.0, 1.0])["counts"] == [0, 0, 0, 0, 2]
    b = bin_nse([-0.1, 0.6, 0.8])
    assert b["counts"] == [1, 0, 0, 1, 1]
    assert bin_nse([0.4, 0.6])["fraction_above_0.5"] == 0.5


def test_bin_edges_and_undefined():
    b = bin_nse([0.0, 0.25, 0.5, 0.75, math.nan])
    assert b["counts"] == [0, 1, 1, 1, 1]
    assert b["undefined"] == 1
    assert sum(b["counts"]) + b["undefined"] == 5
    assert sum(b["fractions"]) == pytest.approx(1.0, abs=1e-15)


# ---------------------------------------------------------------- RMP

def test_rmp_examples():
    single = relative_model_performance({"a": [0.3, 0.9]})
    assert single["curves"]["a"][0] == 1.0
    two = relative_model_performance({"a": [0.9], "b": [0.7]})
    assert two["rmp"]["a"][0] == 0.0
    assert two["rmp"]["b"][0] == pytest.approx(0.2, abs=1e-15)
    grid = two["grid"]
    assert two["curves"]["b"][np.argmin(np.abs(grid - 0.2))] == 1.0
    assert two["curves"]["b"][np.argmin(np.abs(grid - 0.19))] == 0.0


def test_rmp_grid_shape():
    grid = rmp_grid()
    assert grid.size == 201 and grid[0] == 0.0 and grid[-1] == 2.0 and grid[1] == 0.01


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-3, 1), min_size=5, max_size=5), min_size=1, max_size=4))
def test_rmp_curves_non_decreasing_and_best_is_zero(rows):
    scores = {f"m{k}": row for k, row in enumerate(rows)}
    out = relative_model_performance(scores)
    table = np.array(rows)
    for name, curve in out["curves"].items():
        assert np.all(np.diff(curve) >= 0) and 0.0 <= curve.min() and curve.max() <= 1.0
        assert np.all(out["rmp"][name] >= 0)
    best = table.argmax(axis=0)
    for loc, k in enumerate(best):
        assert out["rmp"][f"m{k}"][loc] == 0.0


def test_rmp_excludes_undefined():
    out = relative_model_performance({"a": [math.nan, 0.5], "b": [0.2, 0.1]})
    assert out["rmp"]["b"][0] == 0.0 and math.isnan(out["rmp"]["a"][0])


# ---------------------------------------------------------------- elevation groups

def test_elevation_groups_hand_case():
    ids = [f"S{k}" for k in range(8)]
    elev = [800, 100, 700, 200, 600, 300, 500, 400]
    scores = {"a": [0.8, 0.1, 0.7, 0.2, 0.6, 0.3, 0.5, 0.4],
              "b": [0.0, 0.9, 0.0, 0.9, 0.0, 0.9, 0.0, 0.9]}
    groups = elevation_group_medians(ids, elev, scores)
    assert [g["stations"] for g in groups] == [["S1", "S3"], ["S5", "S7"], ["S6", "S4"],
                                              ["S2", "S0"]]
    assert [g["medians"]["a"] for g in groups] == [statistics.median([0.1, 0.2]),
                                                   statistics.median([0.3, 0.4]),
                                                   statistics.median([0.5, 0.6]),
                                                   statistics.median([0.7, 0.8])]
    assert [g["best"] for g in groups] == ["b", "b", "a", "a"]


def test_elevation_groups_ties_use_station_order():
    ids = ["D", "C", "B", "A"]
    groups = elevation_group_medians(ids, [5.0] * 4, {"a": [1.0, 2.0, 3.0, 4.0]})
    assert [g["stations"] for g in groups] == [["A"], ["B"], ["C"], ["D"]]


def test_elevation_groups_identical_scores_and_minimum():
    groups = elevation_group_medians(list("ABCDE"), [1, 2, 3, 4, 5], {"a": [0.4] * 5})
    assert {g["medians"]["a"] for g in groups} == {0.4}
    with pytest.raises(ValueError):
        elevation_group_medians(list("ABC"), [1, 2, 3], {"a": [0.1] * 3})


# ---------------------------------------------------------------- evaluate_locations / report

@pytest.fixture(scope="module")
def dataset():
    metas, records = D.generate_synthetic(D.SyntheticConfig(n=6, m=20, seasons=3, seed=2))
    return D.build_dataset(metas, records, season_length=20)


def _obs(ds, seasons):
    return ds.labels[:, :, ds.season_index(seasons)]


def test_perfect_predictions(dataset):
    scores = evaluate_locations({"p": _obs(dataset, [2003, 2004])}, dataset, [2003, 2004])["p"]
    assert all(s.nse == 1.0 and s.mean_daily_error == 0.0 for s in scores)
    assert all(v == 0.0 for s in scores for v in s.annual_max_error.values())


def test_constant_over_prediction(dataset):
    obs = _obs(dataset, [2004])
    s = evaluate_locations({"p": obs + 10.0}, dataset, [2004])["p"][0]
    a = obs[0].reshape(-1)
    assert s.mean_daily_error == pytest.approx(10.0, abs=1e-12)
    assert s.nse == pytest.approx(1 - a.size * 100.0 / np.sum((a - a.mean()) ** 2), abs=1e-12)


def test_annual_max_uses_curve_maxima(dataset):
    from dataclasses import replace
    labels = np.zeros((6, 20, 3))
    labels[:, 10, :] = 490.0
    ds = replace(dataset, labels=labels, label_mask=np.ones_like(labels, bool))
    pred = np.zeros((6, 20, 1))
    pred[:, 5, 0] = 500.0
    s = evaluate_locations({"p": pred}, ds, [2004])["p"][0]
    assert s.annual_max_error == {2004: 10.0}


def test_coverage_gap_lists_keys(dataset):
    pred = _obs(dataset, [2004]).copy()
    pred[1, 3, 0] = np.nan
    with pytest.raises(CoverageError, match=r"S001.*2004, 4"):
        evaluate_locations({"p": pred}, dataset, [2004])
    with pytest.raises(CoverageError):
        evaluate_locations({"p": pred[:, :10]}, dataset, [2004])


def test_report_files(dataset, tmp_path, rng):
    obs = _obs(dataset, [2004])
    preds = {"temporal": obs + rng.normal(0, 5, obs.shape), "spatial": obs * 0.9}
    preds["ensemble"] = (preds["spatial"] + preds["temporal"]) / 2
    report = build_report(preds, dataset, [2004])
    assert report.models == ["ensemble", "spatial", "temporal"]
    out = write_report(report, tmp_path / "report")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["annual_max_errors.csv", "best_model.csv", "elevation_medians.csv",
                     "location_scores.csv", "nse_bins.csv", "rmp_curves.csv", "summary.json"]
    lines = (out / "location_scores.csv").read_text().splitlines()
    assert lines[0] == "model,station_id,nse,mean_daily_err_mm,elevation_m"
    assert len(lines) == 1 + 3 * 6
    summary = json.loads((out / "summary.json").read_text())
    assert summary == json.loads(json.dumps(report_summary(report)))
    assert set(summary["fraction_nse_above_0.5"]) == {"ensemble", "spatial", "temporal"}
    assert "lat" in (out / "best_model.csv").read_text().splitlines()[0]
    text = format_summary(summary)
    assert "NSE > 0.5" in text and "ensemble" in text
