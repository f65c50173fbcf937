"""Per-location Nash-Sutcliffe efficiency and the derived result tables.

All aggregate tables are written as plot-ready CSV / JSON; no figures are drawn.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import SeasonDataset

NSE_BIN_LABELS = ("<0", "[0,0.25)", "[0.25,0.5)", "[0.5,0.75)", "[0.75,1]")
NSE_BIN_EDGES = (0.0, 0.25, 0.5, 0.75)
RMP_STEP = 0.01
RMP_MAX = 2.0
# absorbs float noise when comparing an NSE difference with a grid value
RMP_TOL = 1e-12
MODEL_ORDER = ("ensemble", "spatial", "temporal", "lstm", "lr")


class CoverageError(ValueError):
    """Predictions are missing for some (location, season, day) keys."""


def nse(actual, predicted) -> float:
    """Nash-Sutcliffe efficiency, ``1 - SSE / sum((actual - mean(actual))**2)``.

    Returns NaN (the undefined flag) when ``actual`` is constant.
    """
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError(f"need two 1-D arrays of equal length, got {a.shape} and {p.shape}")
    if a.size < 2:
        raise ValueError("NSE needs at least two values")
    denom = np.sum((a - a.mean()) ** 2)
    if denom == 0.0:
        return math.nan
    return float(1.0 - np.sum((a - p) ** 2) / denom)


@dataclass
class LocationScore:
    station_id: str
    nse: float
    mean_daily_error: float
    annual_max_error: dict[int, float]
    elevation: float
    latitude: float = math.nan
    longitude: float = math.nan

    @property
    def defined(self) -> bool:
        return math.isfinite(self.nse)


def evaluate_locations(predictions: Mapping[str, np.ndarray], dataset: SeasonDataset,
                       test_seasons: Sequence[int]) -> dict[str, list[LocationScore]]:
    """Score every model at every location over the pooled test days.

    ``predictions[model]`` has shape (n, m, len(test_seasons)) in mm.
    """
    test_seasons = list(test_seasons)
    cols = dataset.season_index(test_seasons)
    obs = dataset.labels[:, :, cols]
    seen = dataset.label_mask[:, :, cols]
    n, m = dataset.n_locations, dataset.season_length
    out = {}
    for model, pred in predictions.items():
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != obs.shape:
            raise CoverageError(f"{model}: predictions have shape {pred.shape}, "
                                f"expected {obs.shape}")
        holes = np.argwhere(~np.isfinite(pred))
        if len(holes):
            keys = [(dataset.station_ids[i], int(test_seasons[s]), int(j) + 1)
                    for i, j, s in holes[:5]]
            raise CoverageError(f"{model}: {len(holes)} (station, season, day) keys lack "
                                f"predictions, e.g. {keys}")
        scores = []
        for i, st in enumerate(dataset.stations):
            a = obs[i][seen[i]]
            p = pred[i][seen[i]]
            score = nse(a, p) if a.size >= 2 else math.nan
            max_err = {}
            for s, h in enumerate(test_seasons):
                if seen[i, :, s].any():
                    max_err[h] = float(pred[i, :, s].max() - obs[i, seen[i, :, s], s].max())
            scores.append(LocationScore(
                st.station_id, score, float(np.mean(p - a)) if a.size else math.nan,
                max_err, st.elevation, st.latitude, st.longitude))
        out[model] = scores
    return out


def bin_nse(values: Sequence[float]) -> dict:
    """Counts and fractions over the five NSE groups; NaN counts as undefined."""
    values = np.asarray(values, dtype=np.float64)
    defined = values[np.isfinite(values)]
    idx = np.searchsorted(NSE_BIN_EDGES, defined, side="right")
    counts = np.bincount(idx, minlength=len(NSE_BIN_LABELS))
    total = defined.size
    return {
        "labels": list(NSE_BIN_LABELS),
        "counts": counts.tolist(),
        "fractions": (counts / total).tolist() if total else [0.0] * len(NSE_BIN_LABELS),
        "undefined": int(values.size - total),
        "fraction_above_0.5": float(np.mean(defined > 0.5)) if total else math.nan,
    }


def rmp_grid(step: float = RMP_STEP, max_x: float = RMP_MAX) -> np.ndarray:
    k = int(round(max_x / step))
    return np.round(np.arange(k + 1) * step, 10)


def relative_model_performance(nse_by_model: Mapping[str, Sequence[float]],
                               step: float = RMP_STEP, max_x: float = RMP_MAX) -> dict:
    """Gap to the best model at each location, and its cumulative curve.

    Returns ``{"grid", "rmp": {model: per-location gaps}, "curves": {model: fractions}}``.
    Undefined NSE values are left out of both the best-model choice and the
    model's own curve.
    """
    names = list(nse_by_model)
    table = np.array([np.asarray(nse_by_model[k], dtype=np.float64) for k in names])
    finite = np.isfinite(table)
    best = np.where(finite, table, -np.inf).max(axis=0)
    grid = rmp_grid(step, max_x)
    rmp, curves = {}, {}
    for k, name in enumerate(names):
        gap = np.where(finite[k], best - table[k], np.nan)
        rmp[name] = gap
        ok = gap[np.isfinite(gap)]
        if ok.size:
            curves[name] = np.array([(ok <= x + RMP_TOL).mean() for x in grid])
        else:
            curves[name] = np.zeros(grid.size)
    return {"grid": grid, "rmp": rmp, "curves": curves}


def elevation_group_medians(station_ids: Sequence[str], elevations: Sequence[float],
                            nse_by_model: Mapping[str, Sequence[float]]) -> list[dict]:
    """Median NSE per model in each elevation quartile group.

    Locations are ranked by (elevation, station_id); rank ``r`` of ``N`` falls
    in group ``floor(4 r / N)``.
    """
    n = len(station_ids)
    if n < 4:
        raise ValueError("elevation groups need at least 4 locations")
    order = sorted(range(n), key=lambda i: (elevations[i], station_ids[i]))
    groups = []
    for g in range(4):
        members = [order[r] for r in range(n) if (4 * r) // n == g]
        medians = {}
        for name, vals in nse_by_model.items():
            v = np.asarray(vals, dtype=np.float64)[members]
            v = v[np.isfinite(v)]
            medians[name] = float(np.median(v)) if v.size else math.nan
        finite = {k: v for k, v in medians.items() if math.isfinite(v)}
        groups.append({
            "group": g + 1,
            "elevation_min": float(elevations[members[0]]),
            "elevation_max": float(elevations[members[-1]]),
            "stations": [station_ids[i] for i in members],
            "medians": medians,
            "best": max(finite, key=finite.get) if finite else None,
        })
    return groups


# ---------------------------------------------------------------- report

@dataclass
class EvalReport:
    scores: dict[str, list[LocationScore]]
    bins: dict[str, dict]
    rmp: dict
    elevation_groups: list[dict]
    test_seasons: list[int] = field(default_factory=list)

    @property
    def models(self) -> list[str]:
        return list(self.scores)


def _ordered(names):
    known = [m for m in MODEL_ORDER if m in names]
    return known + sorted(m for m in names if m not in MODEL_ORDER)


def build_report(predictions: Mapping[str, np.ndarray], dataset: SeasonDataset,
                 test_seasons: Sequence[int]) -> EvalReport:
    predictions = {k: predictions[k] for k in _ordered(predictions)}
    scores = evaluate_locations(predictions, dataset, test_seasons)
    nse_by_model = {k: [s.nse for s in v] for k, v in scores.items()}
    return EvalReport(
        scores=scores,
        bins={k: bin_nse(v) for k, v in nse_by_model.items()},
        rmp=relative_model_performance(nse_by_model),
        elevation_groups=elevation_group_medians(
            dataset.station_ids, [s.elevation for s in dataset.stations], nse_by_model),
        test_seasons=list(test_seasons))


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _csv_num(x) -> str:
    x = float(x)
    return repr(x) if math.isfinite(x) else ""


RMP_SAMPLES = (0.0, 0.1, 0.2, 0.5, 1.0, 2.0)


def report_summary(report: EvalReport) -> dict:
    grid = report.rmp["grid"]
    samples = {}
    for name, curve in report.rmp["curves"].items():
        samples[name] = {f"{x:g}": _num(curve[int(np.argmin(np.abs(grid - x)))])
                         for x in RMP_SAMPLES}
    return {
        "test_seasons": report.test_seasons,
        "models": report.models,
        "n_locations": len(next(iter(report.scores.values()), [])),
        "nse_bins": {k: {**v, "fraction_above_0.5": _num(v["fraction_above_0.5"])}
                     for k, v in report.bins.items()},
        "fraction_nse_above_0.5": {k: _num(v["fraction_above_0.5"])
                                   for k, v in report.bins.items()},
        "median_nse": {k: _num(np.nanmedian([s.nse for s in v]))
                       if any(s.defined for s in v) else None
                       for k, v in report.scores.items()},
        "elevation_groups": [
            {**g, "medians": {k: _num(v) for k, v in g["medians"].items()}}
            for g in report.elevation_groups],
        "rmp_curve_samples": samples,
    }


def write_report(report: EvalReport, out_dir) -> Path:
    """Write ``location_scores.csv``, ``summary.json`` and plot-ready tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "location_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "station_id", "nse", "mean_daily_err_mm", "elevation_m"])
        for model, scores in report.scores.items():
            for s in scores:
                w.writerow([model, s.station_id, _csv_num(s.nse),
                            _csv_num(s.mean_daily_error), repr(float(s.elevation))])
    with open(out / "annual_max_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "station_id", "season", "max_swe_err_mm"])
        for model, scores in report.scores.items():
            for s in scores:
                for season, err in sorted(s.annual_max_error.items()):
                    w.writerow([model, s.station_id, season, _csv_num(err)])
    with open(out / "nse_bins.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "bin", "count", "fraction"])
        for model, b in report.bins.items():
            for label, c, f in zip(b["labels"], b["counts"], b["fractions"]):
                w.writerow([model, label, c, repr(float(f))])
    with open(out / "rmp_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(report.rmp["curves"])
        w.writerow(["rmp"] + names)
        for k, x in enumerate(report.rmp["grid"]):
            w.writerow([f"{x:.2f}"] + [repr(float(report.rmp["curves"][n][k])) for n in names])
    with open(out / "elevation_medians.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = report.models
        w.writerow(["group", "elevation_min_m", "elevation_max_m"] + names + ["best"])
        for g in report.elevation_groups:
            w.writerow([g["group"], repr(g["elevation_min"]), repr(g["elevation_max"])]
                       + [_csv_num(g["medians"][n]) for n in names] + [g["best"] or ""])
    with open(out / "best_model.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "lat", "lon", "best_model", "best_nse"])
        first = next(iter(report.scores.values()))
        for i, s in enumerate(first):
            cands = {m: report.scores[m][i].nse for m in report.models
                     if report.scores[m][i].defined}
            best = max(cands, key=cands.get) if cands else ""
            w.writerow([s.station_id, repr(s.latitude), repr(s.longitude), best,
                        _csv_num(cands[best]) if best else ""])
    (out / "summary.json").write_text(
        json.dumps(report_summary(report), indent=2, sort_keys=True) + "\n")
    return out


def format_summary(summary: dict) -> str:
    """Plain-text tables for the ``report`` command."""
    models = summary["models"]
    lines = [f"Test seasons: {', '.join(map(str, summary['test_seasons']))}   "
             f"locations: {summary['n_locations']}", ""]
    width = max(10, *(len(m) for m in models)) + 2
    header = "NSE group".ljust(14) + "".join(m.rjust(width) for m in models)
    lines += [header, "-" * len(header)]
    for k, label in enumerate(NSE_BIN_LABELS):
        row = label.ljust(14)
        for m in models:
            row += f"{100 * summary['nse_bins'][m]['fractions'][k]:.2f}%".rjust(width)
        lines.append(row)
    row = "undefined".ljust(14)
    for m in models:
        row += str(summary["nse_bins"][m]["undefined"]).rjust(width)
    lines.append(row)
    row = "NSE > 0.5".ljust(14)
    for m in models:
        f = summary["fraction_nse_above_0.5"][m]
        row += ("n/a" if f is None else f"{100 * f:.2f}%").rjust(width)
    lines.append(row)
    row = "median NSE".ljust(14)
    for m in models:
        v = summary["median_nse"][m]
        row += ("n/a" if v is None else f"{v:.3f}").rjust(width)
    lines += [row, "", "Median NSE by elevation group (low to high)"]
    header = "elevation (m)".ljust(20) + "".join(m.rjust(width) for m in models) + "  best"
    lines += [header, "-" * len(header)]
    for g in summary["elevation_groups"]:
        row = f"{g['elevation_min']:.0f}-{g['elevation_max']:.0f}".ljust(20)
        for m in models:
            v = g["medians"][m]
            row += ("n/a" if v is None else f"{v:.3f}").rjust(width)
        lines.append(row + f"  {g['best'] or '-'}")
    lines += ["", "Fraction of locations within RMP x of the best model"]
    xs = list(next(iter(summary["rmp_curve_samples"].values())))
    header = "model".ljust(12) + "".join(f"x={x}".rjust(9) for x in xs)
    lines += [header, "-" * len(header)]
    for m in models:
        row = m.ljust(12)
        for x in xs:
            v = summary["rmp_curve_samples"][m][x]
            row += ("n/a" if v is None else f"{v:.3f}").rjust(9)
        lines.append(row)
    return "\n".join(lines)
