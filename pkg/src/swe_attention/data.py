"""Station ingestion, season assembly, feature construction and synthetic data.

Feature layout per (station, day, season) is ``[phi, alpha, gamma]``:

* phi   -- latitude, longitude, elevation, southness, one-hot land cover
* alpha -- the day's observations (precipitation, temperatures, brightness
  temperatures and their 19V-37V difference)
* gamma -- alpha for the same day averaged over seasons ``h-w .. h+w``
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SEASON_LENGTH = 270
DEFAULT_TEST_YEARS = (2007, 2008, 2015, 2017, 2018)
MISSING_THRESHOLD = 0.10

STATION_COLUMNS = ("station_id", "lat", "lon", "elevation_m", "aspect_deg", "slope_deg",
                   "land_cover")
DAILY_COLUMNS = ("station_id", "date", "swe_mm", "precip_mm", "tmin_c", "tmax_c", "tavg_c",
                 "tb19v_k", "tb37v_k")
# raw daily variables checked by the missing-value filter
RAW_VARIABLES = ("swe", "precip", "temp_min", "temp_max", "temp_avg", "tb_19v", "tb_37v")
DYNAMIC_FEATURES = ("precip", "temp_min", "temp_max", "temp_avg", "tb_19v", "tb_37v", "tb_diff")
STATIC_FEATURES = ("latitude", "longitude", "elevation", "southness")

DATASET_FORMAT = "swe-season-dataset"
DATASET_VERSION = 1


class DataFormatError(ValueError):
    """An input file does not follow the documented layout."""


@dataclass(frozen=True)
class StationMeta:
    station_id: str
    latitude: float
    longitude: float
    elevation: float
    southness: float
    land_cover: str
    aspect: float = 0.0
    slope: float = 0.0

    def __post_init__(self):
        if abs(self.southness) > 1.0 + 1e-12:
            raise ValueError(f"southness {self.southness} outside [-1, 1]")
        if not math.isfinite(self.elevation):
            raise ValueError("elevation must be finite")


@dataclass(frozen=True)
class DailyRecord:
    """One station-day.  ``None`` marks a missing value."""

    station_id: str
    season: int
    day: int
    swe: float | None
    precip: float | None
    temp_min: float | None
    temp_max: float | None
    temp_avg: float | None
    tb_19v: float | None
    tb_37v: float | None

    @property
    def tb_diff(self) -> float | None:
        if self.tb_19v is None or self.tb_37v is None:
            return None
        return self.tb_19v - self.tb_37v


# ---------------------------------------------------------------- calendar

def _is_leap(year: int) -> bool:
    return year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)


def water_year_day(date: dt.date) -> tuple[int, int] | None:
    """Map a date to ``(water year, day)`` with day 1 = Oct 1; Feb 29 maps to None."""
    if date.month == 2 and date.day == 29:
        return None
    season = date.year + 1 if date.month >= 10 else date.year
    start = dt.date(season - 1, 10, 1)
    day = (date - start).days + 1
    if _is_leap(season) and date >= dt.date(season, 3, 1):
        day -= 1
    return season, day


def season_date(season: int, day: int) -> dt.date:
    """Inverse of :func:`water_year_day`."""
    date = dt.date(season - 1, 10, 1) + dt.timedelta(days=day - 1)
    if _is_leap(season) and date >= dt.date(season, 2, 29):
        date += dt.timedelta(days=1)
    return date


# ---------------------------------------------------------------- ingestion

def compute_southness(aspect: float, slope: float) -> float:
    """cos(aspect) * sin(slope), both given in degrees."""
    if not 0.0 <= slope <= 90.0:
        raise ValueError(f"slope must lie in [0, 90] degrees, got {slope}")
    if not 0.0 <= aspect < 360.0:
        raise ValueError(f"aspect must lie in [0, 360) degrees, got {aspect}")
    return math.cos(math.radians(aspect)) * math.sin(math.radians(slope))


def _read_rows(path, expected: Sequence[str]):
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise DataFormatError(f"{path}: missing header row")
    header = [h.strip() for h in header]
    if tuple(header) != tuple(expected):
        raise DataFormatError(f"{path}: header {header} does not match {list(expected)}")
    for row in reader:
        if not row:
            continue
        yield reader.line_num, row


def _number(text: str, path, line: int, column: str, optional: bool = False):
    text = text.strip()
    if text == "":
        if optional:
            return None
        raise DataFormatError(f"{path}:{line}: column {column} is required")
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{line}: column {column} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataFormatError(f"{path}:{line}: column {column} is not finite")
    return value


def load_stations(path) -> list[StationMeta]:
    stations = []
    seen = set()
    for line, row in _read_rows(path, STATION_COLUMNS):
        if len(row) != len(STATION_COLUMNS):
            raise DataFormatError(f"{path}:{line}: expected {len(STATION_COLUMNS)} fields, "
                                  f"got {len(row)}")
        sid = row[0].strip()
        if not sid or sid in seen:
            raise DataFormatError(f"{path}:{line}: empty or duplicate station_id {sid!r}")
        seen.add(sid)
        lat, lon, elev, aspect, slope = (
            _number(row[k], path, line, STATION_COLUMNS[k]) for k in range(1, 6))
        try:
            south = compute_southness(aspect, slope)
        except ValueError as exc:
            raise DataFormatError(f"{path}:{line}: {exc}") from None
        stations.append(StationMeta(sid, lat, lon, elev, south, row[6].strip(), aspect, slope))
    return stations


def load_daily(path, station_ids: Iterable[str],
               season_length: int = SEASON_LENGTH) -> list[DailyRecord]:
    """Parse ``daily.csv``.  Feb 29 and days past ``season_length`` are skipped."""
    known = set(station_ids)
    records = []
    for line, row in _read_rows(path, DAILY_COLUMNS):
        if len(row) != len(DAILY_COLUMNS):
            raise DataFormatError(f"{path}:{line}: expected {len(DAILY_COLUMNS)} fields, "
                                  f"got {len(row)}")
        sid = row[0].strip()
        if sid not in known:
            raise DataFormatError(f"{path}:{line}: unknown station_id {sid!r}")
        try:
            date = dt.date.fromisoformat(row[1].strip())
        except ValueError:
            raise DataFormatError(f"{path}:{line}: bad date {row[1]!r}") from None
        values = [_number(row[k], path, line, DAILY_COLUMNS[k], optional=True)
                  for k in range(2, 9)]
        tmin, tmax = values[2], values[3]
        if tmin is not None and tmax is not None and tmin > tmax:
            raise DataFormatError(f"{path}:{line}: tmin_c {tmin} exceeds tmax_c {tmax}")
        key = water_year_day(date)
        if key is None or key[1] > season_length:
            continue
        records.append(DailyRecord(sid, key[0], key[1], *values))
    return records


def load_station_data(meta_path, daily_path, season_length: int = SEASON_LENGTH):
    stations = load_stations(meta_path)
    records = load_daily(daily_path, [s.station_id for s in stations], season_length)
    return stations, records


def _fmt(value) -> str:
    return "" if value is None or (isinstance(value, float) and math.isnan(value)) else repr(value)


def write_station_csv(path, stations: Sequence[StationMeta]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_COLUMNS)
        for s in stations:
            w.writerow([s.station_id, repr(s.latitude), repr(s.longitude), repr(s.elevation),
                        repr(s.aspect), repr(s.slope), s.land_cover])


def write_daily_csv(path, records: Sequence[DailyRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DAILY_COLUMNS)
        for r in records:
            w.writerow([r.station_id, season_date(r.season, r.day).isoformat(),
                        _fmt(r.swe), _fmt(r.precip), _fmt(r.temp_min), _fmt(r.temp_max),
                        _fmt(r.temp_avg), _fmt(r.tb_19v), _fmt(r.tb_37v)])


# ---------------------------------------------------------------- filtering / assembly

def filter_stations(records: Iterable[DailyRecord], threshold: float = MISSING_THRESHOLD,
                    season_length: int = SEASON_LENGTH, seasons: Iterable[int] | None = None,
                    station_ids: Iterable[str] | None = None) -> set[str]:
    """Stations whose missing fraction is at most ``threshold`` for every
    variable in every season (days without a record count as missing)."""
    present: dict[tuple[str, int], np.ndarray] = defaultdict(
        lambda: np.zeros(len(RAW_VARIABLES), dtype=np.int64))
    found_ids, found_seasons = set(), set()
    for r in records:
        found_ids.add(r.station_id)
        found_seasons.add(r.season)
        counts = present[(r.station_id, r.season)]
        for k, name in enumerate(RAW_VARIABLES):
            if getattr(r, name) is not None:
                counts[k] += 1
    ids = set(station_ids) if station_ids is not None else found_ids
    season_list = sorted(seasons) if seasons is not None else sorted(found_seasons)
    retained = set()
    for sid in ids:
        ok = bool(season_list)
        for h in season_list:
            counts = present.get((sid, h))
            if counts is None:
                ok = False
                break
            missing = season_length - counts
            if np.any(missing / season_length > threshold):
                ok = False
                break
        if ok:
            retained.add(sid)
    return retained


def fill_gaps(series: np.ndarray) -> np.ndarray:
    """Linear interpolation inside, nearest observed value at the ends."""
    series = np.asarray(series, dtype=np.float64)
    ok = ~np.isnan(series)
    if ok.all():
        return series.copy()
    if not ok.any():
        raise ValueError("cannot fill a series with no observed values")
    idx = np.arange(series.size)
    return np.interp(idx, idx[ok], series[ok])


@dataclass
class SeasonArrays:
    """One season for an ordered station list: ``dynamic`` is (n, m, 7) gap-filled,
    ``swe`` is (n, m) with NaN where the label is missing."""

    season: int
    dynamic: np.ndarray
    swe: np.ndarray


def assemble_season(records: Iterable[DailyRecord], season: int, station_ids: Sequence[str],
                    season_length: int = SEASON_LENGTH) -> SeasonArrays:
    index = {sid: k for k, sid in enumerate(station_ids)}
    n, m = len(station_ids), season_length
    raw = np.full((n, m, len(RAW_VARIABLES)), np.nan)
    for r in records:
        if r.season != season or r.station_id not in index or not 1 <= r.day <= m:
            continue
        raw[index[r.station_id], r.day - 1] = [
            np.nan if getattr(r, v) is None else getattr(r, v) for v in RAW_VARIABLES]
    for i, sid in enumerate(station_ids):
        for k, name in enumerate(RAW_VARIABLES):
            if np.isnan(raw[i, :, k]).all():
                raise ValueError(f"station {sid} has no {name} values in season {season}; "
                                 "it should have been removed by filter_stations")
    dynamic = np.empty((n, m, len(DYNAMIC_FEATURES)))
    for i in range(n):
        for k in range(1, len(RAW_VARIABLES)):
            dynamic[i, :, k - 1] = fill_gaps(raw[i, :, k])
    dynamic[:, :, 6] = dynamic[:, :, 4] - dynamic[:, :, 5]
    return SeasonArrays(season, dynamic, raw[:, :, 0].copy())


def compute_gamma(dynamic: np.ndarray, i: int, j: int, h: int, w: int,
                  seasons: Sequence[int]) -> np.ndarray:
    """Average of alpha for station ``i``, day ``j`` (1-based) over seasons
    ``h-w .. h+w`` that exist in ``seasons``.

    ``dynamic`` has shape (n, m, |S|, A) with the season axis ordered as ``seasons``.
    """
    if w < 0:
        raise ValueError("gamma window must be non-negative")
    seasons = list(seasons)
    picks = [k for k, t in enumerate(seasons) if h - w <= t <= h + w]
    if h not in seasons:
        raise ValueError(f"season {h} not in dataset")
    window = dynamic[i, j - 1, picks]
    return _window_mean(window, axis=0)


def gamma_features(dynamic: np.ndarray, seasons: Sequence[int], w: int) -> np.ndarray:
    """:func:`compute_gamma` for every (station, day, season) at once."""
    if w < 0:
        raise ValueError("gamma window must be non-negative")
    out = np.empty_like(dynamic)
    for k, h in enumerate(seasons):
        picks = [q for q, t in enumerate(seasons) if h - w <= t <= h + w]
        out[:, :, k] = _window_mean(dynamic[:, :, picks], axis=2)
    return out


def _window_mean(values: np.ndarray, axis: int) -> np.ndarray:
    # offset from the first season keeps the mean of identical seasons exact
    base = np.take(values, [0], axis=axis)
    return np.squeeze(base, axis=axis) + (values - base).mean(axis=axis)


# ---------------------------------------------------------------- dataset

@dataclass
class SeasonDataset:
    stations: list[StationMeta]
    seasons: list[int]
    season_length: int
    features: np.ndarray          # (n, m, |S|, F)
    feature_mask: np.ndarray      # (n, m, |S|, F) True where observed/filled
    labels: np.ndarray            # (n, m, |S|) SWE in mm, NaN where missing
    label_mask: np.ndarray        # (n, m, |S|)
    feature_names: list[str]
    land_cover_codes: list[str]
    gamma_window: int
    norm_stats: dict | None = None
    train_seasons: list[int] = field(default_factory=list)
    test_seasons: list[int] = field(default_factory=list)

    @property
    def station_ids(self) -> list[str]:
        return [s.station_id for s in self.stations]

    @property
    def n_locations(self) -> int:
        return len(self.stations)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[-1]

    def season_index(self, seasons: Iterable[int]) -> list[int]:
        lookup = {h: k for k, h in enumerate(self.seasons)}
        try:
            return [lookup[h] for h in seasons]
        except KeyError as exc:
            raise ValueError(f"season {exc.args[0]} not in dataset") from None

    def save(self, path) -> None:
        meta = {
            "format": DATASET_FORMAT, "version": DATASET_VERSION,
            "stations": [vars(s) for s in self.stations],
            "seasons": self.seasons, "season_length": self.season_length,
            "feature_names": self.feature_names, "land_cover_codes": self.land_cover_codes,
            "gamma_window": self.gamma_window, "norm_stats": self.norm_stats,
            "train_seasons": self.train_seasons, "test_seasons": self.test_seasons,
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)),
                     features=self.features, feature_mask=self.feature_mask,
                     labels=self.labels, label_mask=self.label_mask)

    @classmethod
    def load(cls, path) -> "SeasonDataset":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != DATASET_FORMAT:
                raise DataFormatError(f"{path} is not a season dataset cache")
            if meta.get("version") != DATASET_VERSION:
                raise DataFormatError(f"{path}: unsupported dataset version {meta.get('version')}")
            arrays = {k: z[k] for k in ("features", "feature_mask", "labels", "label_mask")}
        return cls(stations=[StationMeta(**s) for s in meta["stations"]],
                   seasons=meta["seasons"], season_length=meta["season_length"],
                   feature_names=meta["feature_names"],
                   land_cover_codes=meta["land_cover_codes"],
                   gamma_window=meta["gamma_window"], norm_stats=meta["norm_stats"],
                   train_seasons=meta["train_seasons"], test_seasons=meta["test_seasons"],
                   **arrays)


def example_key_count(n_locations: int, n_seasons: int, season_length: int) -> int:
    """Number of (location, season, day) keys."""
    return n_locations * n_seasons * season_length


def build_dataset(stations: Sequence[StationMeta], records: Sequence[DailyRecord],
                  season_length: int = SEASON_LENGTH, gamma_window: int = 1,
                  threshold: float = MISSING_THRESHOLD) -> SeasonDataset:
    """Filter stations, assemble every season and lay out ``[phi, alpha, gamma]``."""
    seasons = sorted({r.season for r in records})
    if not seasons:
        raise ValueError("no daily records inside any season")
    keep = filter_stations(records, threshold, season_length, seasons,
                           [s.station_id for s in stations])
    kept = [s for s in stations if s.station_id in keep]
    if not kept:
        raise ValueError(f"no station passes the {threshold:.0%} missing-value filter")
    ids = [s.station_id for s in kept]
    by_season = defaultdict(list)
    for r in records:
        by_season[r.season].append(r)
    parts = [assemble_season(by_season[h], h, ids, season_length) for h in seasons]
    dynamic = np.stack([p.dynamic for p in parts], axis=2)       # (n, m, S, 7)
    labels = np.stack([p.swe for p in parts], axis=2)             # (n, m, S)
    gamma = gamma_features(dynamic, seasons, gamma_window)

    codes = sorted({s.land_cover for s in kept})
    static = np.array([[s.latitude, s.longitude, s.elevation, s.southness]
                       + [1.0 if s.land_cover == c else 0.0 for c in codes] for s in kept])
    n, m, n_seasons = len(kept), season_length, len(seasons)
    static = np.broadcast_to(static[:, None, None, :], (n, m, n_seasons, static.shape[1]))
    features = np.concatenate([static, dynamic, gamma], axis=-1)
    names = (list(STATIC_FEATURES) + [f"land_cover={c}" for c in codes]
             + list(DYNAMIC_FEATURES) + [f"gamma_{v}" for v in DYNAMIC_FEATURES])
    return SeasonDataset(
        stations=list(kept), seasons=seasons, season_length=season_length,
        features=np.ascontiguousarray(features), feature_mask=np.ones(features.shape, bool),
        labels=labels, label_mask=~np.isnan(labels), feature_names=names,
        land_cover_codes=codes, gamma_window=gamma_window)


def split_train_test(seasons: Sequence[int], test_years: Iterable[int] = DEFAULT_TEST_YEARS
                     ) -> tuple[list[int], list[int]]:
    seasons = sorted(seasons)
    test = sorted(set(test_years))
    absent = [y for y in test if y not in seasons]
    if absent:
        raise ValueError(f"test years {absent} are not in the data (seasons {seasons})")
    train = [h for h in seasons if h not in test]
    if not train:
        raise ValueError("no seasons left for training")
    return train, test


def _is_one_hot(name: str) -> bool:
    return name.startswith("land_cover=")


def normalize_features(dataset: SeasonDataset, train_seasons: Sequence[int],
                       test_seasons: Sequence[int] | None = None) -> SeasonDataset:
    """z-score continuous features with training-season statistics.

    Features with std below 1e-12 are centered only; one-hot columns and the
    SWE labels are left untouched.
    """
    train_seasons = list(train_seasons)
    if not train_seasons:
        raise ValueError("normalization needs at least one training season")
    idx = dataset.season_index(train_seasons)
    train = dataset.features[:, :, idx, :].reshape(-1, dataset.feature_dim)
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    scaled = std >= 1e-12
    for k, name in enumerate(dataset.feature_names):
        if _is_one_hot(name):
            mean[k], std[k], scaled[k] = 0.0, 1.0, False
    stats = {"mean": mean.tolist(), "std": std.tolist(), "scaled": scaled.tolist(),
             "feature_names": list(dataset.feature_names)}
    if test_seasons is None:
        test_seasons = [h for h in dataset.seasons if h not in train_seasons]
    out = apply_normalization(dataset, stats)
    out.train_seasons = sorted(train_seasons)
    out.test_seasons = sorted(test_seasons)
    return out


def apply_normalization(dataset: SeasonDataset, stats: dict) -> SeasonDataset:
    if list(stats["feature_names"]) != list(dataset.feature_names):
        raise ValueError("normalization statistics were computed for a different feature layout")
    mean = np.asarray(stats["mean"])
    std = np.asarray(stats["std"])
    scaled = np.asarray(stats["scaled"], dtype=bool)
    features = dataset.features - mean
    features[..., scaled] /= std[scaled]
    return replace(dataset, features=features, norm_stats=stats)


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 8
    m: int = 30
    seasons: int = 4
    noise: float = 0.0
    seed: int = 0
    first_year: int = 2002
    missing_fraction: float = 0.0


LAND_COVER_CODES = ("42", "52", "71")


def _correlated_field(rng, stations, n_draws):
    lat = np.radians([s.latitude for s in stations])
    lon = np.radians([s.longitude for s in stations])
    elev = np.array([s.elevation for s in stations])
    x = 6371.0 * lon * np.cos(lat.mean())
    y = 6371.0 * lat
    dist = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
    delev = np.abs(elev[:, None] - elev[None, :])
    cov = np.exp(-dist / 300.0 - delev / 800.0)
    chol = np.linalg.cholesky(cov + 1e-9 * np.eye(len(stations)))
    return (chol @ rng.standard_normal((len(stations), n_draws))).T


def _swe_curve(days, onset, peak_day, melt_out, peak):
    t = np.asarray(days, dtype=float)
    rise = np.clip((t - onset) / (peak_day - onset), 0.0, 1.0)
    fall = np.clip((t - peak_day) / (melt_out - peak_day), 0.0, 1.0)
    up = 0.5 * (1.0 - np.cos(np.pi * rise))
    down = 1.0 - fall ** 1.5
    curve = peak * np.where(t < peak_day, up, down)
    curve[t >= melt_out] = 0.0
    return curve


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()
                       ) -> tuple[list[StationMeta], list[DailyRecord]]:
    """Stations plus daily records with an accumulate / plateau / melt SWE shape.

    Peak SWE grows with elevation and carries a per-season multiplier that is
    correlated between stations that are close in distance and elevation.
    Brightness-temperature difference rises with SWE, precipitation follows
    accumulation and temperature dips mid-season.  ``noise`` scales additive
    noise on SWE and brightness temperatures.  Every curve reaches zero
    before day ``m``.
    """
    if cfg.n < 1 or cfg.m < 4 or cfg.seasons < 1:
        raise ValueError("synthetic data needs n >= 1, m >= 4 and seasons >= 1")
    rng = np.random.default_rng(cfg.seed)
    stations = []
    for k in range(cfg.n):
        aspect = float(rng.uniform(0.0, 360.0))
        slope = float(rng.uniform(0.0, 35.0))
        stations.append(StationMeta(
            station_id=f"S{k:03d}",
            latitude=float(rng.uniform(37.0, 48.0)),
            longitude=float(rng.uniform(-122.0, -105.0)),
            elevation=float(rng.uniform(1200.0, 3400.0)),
            southness=compute_southness(aspect, slope),
            land_cover=str(rng.choice(LAND_COVER_CODES)),
            aspect=aspect, slope=slope))
    field_draws = _correlated_field(rng, stations, cfg.seasons)
    m = cfg.m
    days = np.arange(m, dtype=float)
    records = []
    for h_idx in range(cfg.seasons):
        season = cfg.first_year + h_idx
        season_scale = rng.uniform(0.6, 1.4)
        timing_shift = rng.uniform(-0.04, 0.04)
        for i, st in enumerate(stations):
            elev_frac = (st.elevation - 1200.0) / 2200.0
            peak = ((40.0 + 0.2 * (st.elevation - 1200.0)) * season_scale
                    * math.exp(0.25 * field_draws[h_idx, i]) * (1.0 - 0.15 * st.southness))
            onset = 0.08 * (m - 1)
            peak_day = (0.45 + 0.15 * elev_frac + timing_shift) * (m - 1)
            melt_out = min(peak_day + (0.25 + 0.10 * elev_frac) * (m - 1), 0.95 * (m - 1))
            clean = _swe_curve(days, onset, peak_day, melt_out, peak)
            swe = clean.copy()
            snowy = clean > 0
            swe[snowy] += cfg.noise * 0.05 * peak * rng.standard_normal(snowy.sum())
            swe = np.maximum(swe, 0.0)

            cold = np.sin(np.pi * days / (m - 1))
            tavg = (6.0 - 14.0 * cold - 6.5 * (st.elevation - 1200.0) / 1000.0
                    + 2.0 * rng.standard_normal(m))
            tmin = tavg - 4.0 - np.abs(rng.standard_normal(m))
            tmax = tavg + 4.0 + np.abs(rng.standard_normal(m))
            gain = np.maximum(np.diff(clean, prepend=0.0), 0.0)
            precip = gain * rng.uniform(1.0, 1.3, m) + np.where(
                rng.random(m) < 0.15, rng.exponential(3.0, m), 0.0)
            tb37 = 255.0 - 0.08 * clean + 0.5 * tavg + cfg.noise * 2.0 * rng.standard_normal(m)
            tb19 = 258.0 - 0.02 * clean + 0.5 * tavg + cfg.noise * 2.0 * rng.standard_normal(m)

            columns = [swe, precip, tmin, tmax, tavg, tb19, tb37]
            if cfg.missing_fraction > 0:
                holes = rng.random((len(columns), m)) < cfg.missing_fraction
            for j in range(m):
                values = [float(c[j]) for c in columns]
                if cfg.missing_fraction > 0:
                    values = [None if holes[k, j] else v for k, v in enumerate(values)]
                records.append(DailyRecord(st.station_id, season, j + 1, *values))
    return stations, records
