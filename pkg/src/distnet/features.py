"""Ingestion, normalization, feature construction and window extraction.

CSV inputs (see the dataset manifest) are assembled into one normalized
grid series plus per-station feature tracks, then cut into sliding
training/evaluation windows. Normalization extrema are fitted on the
training date range only and frozen; targets stay in original units, the
model applying the fixed inverse transform inside its forward pass.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .grid import GridSpec, StationSet, assign_cells, fill_series

log = logging.getLogger(__name__)

POLLUTANTS = ("pm25", "pm10", "o3")
WEATHER_RAW = ("temperature", "pressure", "humidity", "wind_speed",
               "wind_direction", "condition_id")
WEATHER_CONTINUOUS = ("temperature", "pressure", "humidity", "wind_speed")

DIFF_LAGS = (1, 3, 6)
MEAN_WINDOWS = (3, 6, 12, 24)
STD_WINDOWS = (6, 24)
N_STAT_FEATURES = len(DIFF_LAGS) + len(MEAN_WINDOWS) + len(STD_WINDOWS)
STAT_LOOKBACK = max(MEAN_WINDOWS)

MAX_IMPUTE_GAP = 6  # hours; longer station gaps invalidate overlapping windows


@dataclass
class RawRecord:
    """One CSV row: either a station pollution record or a cell weather record."""

    timestamp: np.datetime64
    station_id: str | None = None
    cell: tuple[int, int] | None = None
    readings: dict = field(default_factory=dict)
    weather: dict = field(default_factory=dict)


class NormalizationSpec:
    """Per-feature (min, max) learned on the training split only."""

    def __init__(self, bounds: dict[str, tuple[float, float]]):
        for name, (lo, hi) in bounds.items():
            if not hi > lo:
                raise ConfigError(f"constant training feature {name!r} (min == max)")
        self.bounds = dict(bounds)

    @classmethod
    def fit(cls, features: dict[str, np.ndarray]) -> "NormalizationSpec":
        bounds = {}
        for name, arr in features.items():
            vals = np.asarray(arr, dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            if vals.size < 2 or np.min(vals) == np.max(vals):
                raise ConfigError(f"constant training feature {name!r}")
            bounds[name] = (float(np.min(vals)), float(np.max(vals)))
        return cls(bounds)

    def transform(self, name: str, x):
        lo, hi = self.bounds[name]
        return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)

    def inverse(self, name: str, x):
        lo, hi = self.bounds[name]
        return np.asarray(x, dtype=np.float64) * (hi - lo) + lo

    def to_dict(self):
        return {k: list(v) for k, v in self.bounds.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def minmax_fit_transform(series, spec: NormalizationSpec | None = None,
                         name: str = "feature"):
    """Normalize to [0, 1] by training extrema; returns (normalized, spec).

    With a spec supplied the extrema are reused (transform only); test
    values outside the fitted range are allowed to leave [0, 1].
    """
    if spec is None:
        spec = NormalizationSpec.fit({name: series})
    return spec.transform(name, series), spec


def statistical_features(series: np.ndarray) -> np.ndarray:
    """(L,) series -> (L, 9) track: differences at lags 1/3/6, rolling
    means over 3/6/12/24 h, rolling stds over 6/24 h, all ending at t.

    Hours before the series start count as repeats of the first value.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ContractError(f"statistical_features expects a nonempty series, got {x.shape}")
    pad = STAT_LOOKBACK
    padded = np.concatenate([np.full(pad, x[0]), x])
    out = np.empty((x.size, N_STAT_FEATURES))
    col = 0
    for lag in DIFF_LAGS:
        out[:, col] = x - padded[pad - lag:pad - lag + x.size]
        col += 1
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    csq = np.concatenate([[0.0], np.cumsum(padded * padded)])
    ends = np.arange(x.size) + pad + 1
    for w in MEAN_WINDOWS:
        out[:, col] = (csum[ends] - csum[ends - w]) / w
        col += 1
    for w in STD_WINDOWS:
        mean = (csum[ends] - csum[ends - w]) / w
        var = (csq[ends] - csq[ends - w]) / w - mean * mean
        out[:, col] = np.sqrt(np.maximum(var, 0.0))
        col += 1
    return out


def time_features(start: np.datetime64, tau: int) -> np.ndarray:
    """(tau, 2) int array of (hour-of-day, weekday) for the future hours."""
    hours = np.datetime64(start, "h") + np.arange(tau)
    days = hours.astype("datetime64[D]")
    hod = (hours - days).astype(int)
    dow = (days.astype("datetime64[D]").astype(int) + 3) % 7  # epoch day 0 = Thursday
    return np.column_stack([hod, dow]).astype(np.int64)


def encode_weather(raw: np.ndarray, condition_vocab: int) -> np.ndarray:
    """(..., 6) raw weather -> (..., 6 + vocab) encoded channels.

    Continuous channels pass through (normalized later); wind direction
    becomes sin/cos; the condition id becomes a one-hot block.
    """
    cont = raw[..., :4]
    rad = np.radians(raw[..., 4])
    cond = raw[..., 5].astype(np.int64)
    if cond.min() < 0 or cond.max() >= condition_vocab:
        raise DataError(
            f"condition id outside vocabulary [0, {condition_vocab})"
        )
    onehot = np.eye(condition_vocab)[cond]
    return np.concatenate(
        [cont, np.sin(rad)[..., None], np.cos(rad)[..., None], onehot], axis=-1
    )


def n_encoded_weather(condition_vocab: int) -> int:
    return 6 + condition_vocab


# -- CSV readers -------------------------------------------------------


def _parse_hour(text: str, path, line: int) -> np.datetime64:
    try:
        ts = np.datetime64(text.strip())
    except ValueError as exc:
        raise DataError(f"{path}:{line}: bad timestamp {text!r}") from exc
    if ts != np.datetime64(ts, "h"):
        raise DataError(f"{path}:{line}: timestamp {text!r} not aligned to the hour")
    return np.datetime64(ts, "h")


def read_stations(path) -> list[tuple[str, float, float]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader, start=2):
            try:
                out.append((row["station_id"].strip(),
                            float(row["latitude"]), float(row["longitude"])))
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{i}: bad station row") from exc
    if not out:
        raise DataError(f"{path}: no stations")
    return out


def read_pollution(path, station_ids: list[str]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Returns (hourly time axis, {pollutant: (L, R) array with NaN gaps})."""
    idx = {sid: i for i, sid in enumerate(station_ids)}
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader, start=2):
            ts = _parse_hour(row["timestamp"], path, i)
            sid = row["station_id"].strip()
            if sid not in idx:
                raise DataError(f"{path}:{i}: unknown station {sid!r}")
            rec = RawRecord(timestamp=ts, station_id=sid)
            for p in POLLUTANTS:
                text = (row.get(p) or "").strip()
                rec.readings[p] = float(text) if text else np.nan
            records.append(rec)
    if not records:
        raise DataError(f"{path}: no pollution rows")
    t0 = min(r.timestamp for r in records)
    t1 = max(r.timestamp for r in records)
    times = np.arange(t0, t1 + 1)
    span = len(times)
    data = {p: np.full((span, len(station_ids)), np.nan) for p in POLLUTANTS}
    for rec in records:
        t = int(rec.timestamp - t0)
        s = idx[rec.station_id]
        for p in POLLUTANTS:
            data[p][t, s] = rec.readings[p]
    return times, data


def read_weather(path, grid: GridSpec, times: np.ndarray) -> np.ndarray:
    """(L, M, N, 6) raw weather grid; every (hour, cell) must be present."""
    t0 = times[0]
    span = len(times)
    out = np.full((span, grid.rows, grid.cols, len(WEATHER_RAW)), np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for i, row in enumerate(reader, start=2):
            ts = _parse_hour(row["timestamp"], path, i)
            t = int(ts - t0)
            if t < 0 or t >= span:
                continue
            r, c = int(row["row"]), int(row["col"])
            if not (0 <= r < grid.rows and 0 <= c < grid.cols):
                raise DataError(f"{path}:{i}: cell ({r}, {c}) outside grid")
            rec = RawRecord(timestamp=ts, cell=(r, c),
                            weather={k: float(row[k]) for k in WEATHER_RAW})
            out[t, r, c] = [rec.weather[k] for k in WEATHER_RAW]
    missing = np.isnan(out).any(axis=-1)
    if missing.any():
        t, r, c = np.argwhere(missing)[0]
        raise DataError(
            f"{path}: weather missing for hour {times[t]} cell ({r}, {c}) "
            f"({int(missing.sum())} holes total)"
        )
    return out


# -- imputation --------------------------------------------------------


def impute_station_series(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of internal gaps <= MAX_IMPUTE_GAP hours.

    Returns (imputed, long_gap_mask). Longer gaps and gaps touching the
    series boundary stay NaN and are flagged in the mask.
    """
    x = np.asarray(series, dtype=np.float64).copy()
    mask = np.zeros(x.size, dtype=bool)
    isnan = np.isnan(x)
    if not isnan.any():
        return x, mask
    if isnan.all():
        return x, np.ones(x.size, dtype=bool)
    i = 0
    n = x.size
    while i < n:
        if not isnan[i]:
            i += 1
            continue
        j = i
        while j < n and isnan[j]:
            j += 1
        internal = i > 0 and j < n
        if internal and (j - i) <= MAX_IMPUTE_GAP:
            x[i:j] = np.interp(np.arange(i, j), [i - 1, j], [x[i - 1], x[j]])
        else:
            mask[i:j] = True
        i = j
    return x, mask


# -- dataset assembly --------------------------------------------------


@dataclass
class DatasetManifest:
    stations_csv: str
    pollution_csv: str
    weather_csv: str
    grid: GridSpec
    train_cutoff: np.datetime64
    condition_vocab: int = 4
    pollutants: tuple[str, ...] = POLLUTANTS
    truth_csv: str | None = None

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        try:
            g = doc["grid"]
            grid = GridSpec(int(g["rows"]), int(g["cols"]),
                            float(g["origin_lat"]), float(g["origin_lon"]),
                            float(g.get("cell_size", 0.1)))
            base = path.parent
            return cls(
                stations_csv=str(base / doc["stations_csv"]),
                pollution_csv=str(base / doc["pollution_csv"]),
                weather_csv=str(base / doc["weather_csv"]),
                grid=grid,
                train_cutoff=np.datetime64(doc["train_cutoff"], "h"),
                condition_vocab=int(doc.get("condition_vocab", 4)),
                pollutants=tuple(doc.get("pollutants", POLLUTANTS)),
                truth_csv=str(base / doc["truth_csv"]) if doc.get("truth_csv") else None,
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad manifest {path}: {exc}") from exc


@dataclass
class AssembledDataset:
    """Everything the models and loops need for one pollutant."""

    manifest: DatasetManifest
    pollutant: str
    times: np.ndarray                 # (L,) datetime64[h]
    stations: StationSet
    norm: NormalizationSpec
    grid_series: np.ndarray           # (L, M, N, 1 + n) normalized
    readings_orig: np.ndarray         # (L, R), NaN where missing
    readings_norm: np.ndarray         # imputed + normalized, NaN in long gaps
    stats: np.ndarray                 # (R, L, N_STAT_FEATURES)
    long_gap: np.ndarray              # (R, L) bool
    _neighbor_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_weather(self) -> int:
        return self.grid_series.shape[3] - 1

    @property
    def n_hours(self) -> int:
        return len(self.times)

    def target_bounds(self) -> tuple[float, float]:
        return self.norm.bounds[self.pollutant]

    def neighbor_series(self, station_index: int, radius_km: float = 10.0,
                        sectors: int = 8) -> np.ndarray:
        """(L, sectors * (1 + n)) aggregated neighborhood track, cached."""
        key = (station_index, radius_km, sectors)
        if key not in self._neighbor_cache:
            self._neighbor_cache[key] = _build_neighbor_series(
                self, station_index, radius_km, sectors
            )
        return self._neighbor_cache[key]


def _build_neighbor_series(ds: AssembledDataset, center_idx: int,
                           radius_km: float, sectors: int) -> np.ndarray:
    from .grid import KM_PER_DEG_LAT, KM_PER_DEG_LON_EQ

    center = ds.stations.stations[center_idx]
    grid = ds.manifest.grid
    n = ds.n_weather
    L = ds.n_hours
    width = 1 + n
    weather = ds.grid_series[..., 1:]

    center_read = ds.readings_norm[:, center_idx]
    center_weather = weather[:, center.row, center.col, :]
    fallback = np.concatenate([center_read[:, None], center_weather], axis=1)

    out = np.tile(fallback, (1, sectors))
    cos_lat = np.cos(np.radians(center.latitude))
    members: list[list[int]] = [[] for _ in range(sectors)]
    half = 360.0 / sectors / 2.0
    for j, st in enumerate(ds.stations):
        if j == center_idx:
            continue
        dy = (st.latitude - center.latitude) * KM_PER_DEG_LAT
        dx = (st.longitude - center.longitude) * KM_PER_DEG_LON_EQ * cos_lat
        dist = float(np.hypot(dx, dy))
        if dist > radius_km or dist == 0.0:
            continue
        bearing = np.degrees(np.arctan2(dx, dy)) % 360.0
        members[int(((bearing + half) % 360.0) // (2 * half))].append(j)

    for s, idx in enumerate(members):
        if not idx:
            continue
        reads = ds.readings_norm[:, idx]
        have = np.isfinite(reads).any(axis=1)
        with np.errstate(invalid="ignore"):
            rmean = np.where(have, np.nanmean(np.where(np.isfinite(reads), reads, np.nan),
                                              axis=1), center_read)
        rows = [ds.stations.stations[j].row for j in idx]
        cols = [ds.stations.stations[j].col for j in idx]
        wmean = weather[:, rows, cols, :].mean(axis=1)
        block = np.concatenate([rmean[:, None], wmean], axis=1)
        out[:, s * width:(s + 1) * width] = np.where(
            have[:, None], block, fallback
        )
    return out


def assemble_dataset(manifest: DatasetManifest, pollutant: str) -> AssembledDataset:
    """Read, impute, grid, normalize and featurize one pollutant."""
    if pollutant not in manifest.pollutants:
        raise ConfigError(f"pollutant {pollutant!r} not in manifest {manifest.pollutants}")
    stations = assign_cells(read_stations(manifest.stations_csv), manifest.grid)
    times, pollution = read_pollution(manifest.pollution_csv, stations.ids())
    raw_weather = read_weather(manifest.weather_csv, manifest.grid, times)

    readings = pollution[pollutant]
    L, R = readings.shape
    imputed = np.empty_like(readings)
    long_gap = np.empty((R, L), dtype=bool)
    for i in range(R):
        imputed[:, i], long_gap[i] = impute_station_series(readings[:, i])

    train_mask = times <= manifest.train_cutoff
    if not train_mask.any():
        raise ConfigError("train cutoff predates the whole series")
    train_vals = imputed[train_mask]
    features = {pollutant: train_vals[np.isfinite(train_vals)]}
    for k, name in enumerate(WEATHER_CONTINUOUS):
        features[name] = raw_weather[train_mask][..., k]
    norm = NormalizationSpec.fit(features)

    target_grid = fill_series(imputed, stations, manifest.grid).data
    target_grid = norm.transform(pollutant, target_grid)

    weather_enc = encode_weather(raw_weather, manifest.condition_vocab)
    for k, name in enumerate(WEATHER_CONTINUOUS):
        weather_enc[..., k] = norm.transform(name, weather_enc[..., k])

    grid_series = np.concatenate([target_grid[..., None], weather_enc], axis=-1)
    if not np.all(np.isfinite(grid_series)):
        raise DataError("assembled grid series contains non-finite values")

    readings_norm = norm.transform(pollutant, imputed)
    stats_input = np.where(np.isfinite(readings_norm), readings_norm, 0.0)
    # forward/backward fill long gaps so cumsums stay finite; any window
    # overlapping those hours is dropped anyway
    stats = np.empty((R, L, N_STAT_FEATURES))
    for i in range(R):
        col = readings_norm[:, i]
        filled = _ffill_bfill(col)
        stats[i] = statistical_features(filled)

    return AssembledDataset(
        manifest=manifest, pollutant=pollutant, times=times, stations=stations,
        norm=norm, grid_series=grid_series, readings_orig=readings,
        readings_norm=readings_norm, stats=stats, long_gap=long_gap,
    )


def _ffill_bfill(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    good = np.isfinite(out)
    if not good.any():
        return np.zeros_like(out)
    idx = np.where(good, np.arange(out.size), -1)
    np.maximum.accumulate(idx, out=idx)
    out = out[np.maximum(idx, 0)]
    first = np.argmax(good)
    out[:first] = out[first]
    return out


# -- windows -----------------------------------------------------------


@dataclass
class SampleWindow:
    """One training/evaluation example for one (station, start hour)."""

    x: np.ndarray                # (T, M, N, 1 + n) normalized encoder frames
    stats: np.ndarray            # (T, gamma)
    time_ids: np.ndarray         # (tau, 2) future hour-of-day / weekday
    y: np.ndarray                # (tau,) original scale
    row: int
    col: int
    station_id: str
    station_index: int
    pollutant: str
    start: int                   # encoder start index into the series
    target_start: np.datetime64
    target_bounds: tuple[float, float]
    neighbor: np.ndarray | None = None   # (T, sectors * (1 + n)) when requested

    def __post_init__(self):
        if np.isnan(self.y).any():
            raise ContractError("window target contains gaps")
        if np.any(self.y < 0):
            raise ContractError("window target must be nonnegative")

    @property
    def t_encoder(self) -> int:
        return self.x.shape[0]

    @property
    def tau(self) -> int:
        return self.y.shape[0]

    def last_observed(self) -> float:
        """Last encoder-hour target reading, original scale."""
        lo, hi = self.target_bounds
        return float(self.x[-1, self.row, self.col, 0] * (hi - lo) + lo)


@dataclass
class WindowStats:
    total_starts: int = 0
    built: int = 0
    dropped_target_gap: int = 0
    dropped_encoder_gap: int = 0
    dropped_straddle: int = 0
    other_split: int = 0


def build_windows(ds: AssembledDataset, t_enc: int, tau: int,
                  split: str = "all", stride: int = 1,
                  include_neighbor: bool = False,
                  station_ids: list[str] | None = None) -> tuple[list[SampleWindow], WindowStats]:
    """Sliding windows over the assembled series.

    A window with encoder start s covers inputs [s, s+T) and targets
    [s+T, s+T+tau). Train windows end at or before the cutoff; test
    windows start their targets strictly after it; windows straddling the
    cutoff are dropped, as are windows whose target has a gap or whose
    lookback span overlaps a long gap of the target station.
    """
    if split not in ("all", "train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    L = ds.n_hours
    if L < t_enc + tau:
        raise DataError(
            f"series of {L} hours cannot fit encoder {t_enc} + horizon {tau}"
        )
    wanted = None if station_ids is None else set(station_ids)
    cutoff = ds.manifest.train_cutoff
    stats = WindowStats()
    windows: list[SampleWindow] = []
    for i, st in enumerate(ds.stations):
        if wanted is not None and st.station_id not in wanted:
            continue
        gap_hours = np.where(ds.long_gap[i])[0]
        for s in range(0, L - t_enc - tau + 1, stride):
            stats.total_starts += 1
            tgt0, tgt1 = s + t_enc, s + t_enc + tau
            if split != "all":
                is_train = ds.times[tgt1 - 1] <= cutoff
                is_test = ds.times[tgt0] > cutoff
                if not is_train and not is_test:
                    stats.dropped_straddle += 1
                    continue
                if (split == "train") != is_train:
                    stats.other_split += 1
                    continue
            y = ds.readings_orig[tgt0:tgt1, i]
            if np.isnan(y).any():
                stats.dropped_target_gap += 1
                continue
            look0 = max(0, s - STAT_LOOKBACK)
            if gap_hours.size and ((gap_hours >= look0) & (gap_hours < tgt0)).any():
                stats.dropped_encoder_gap += 1
                continue
            windows.append(SampleWindow(
                x=ds.grid_series[s:tgt0],
                stats=ds.stats[i, s:tgt0],
                time_ids=time_features(ds.times[tgt0], tau),
                y=y.copy(),
                row=st.row, col=st.col,
                station_id=st.station_id, station_index=i,
                pollutant=ds.pollutant, start=s,
                target_start=ds.times[tgt0],
                target_bounds=ds.target_bounds(),
                neighbor=ds.neighbor_series(i)[s:tgt0] if include_neighbor else None,
            ))
            stats.built += 1
    return windows, stats
