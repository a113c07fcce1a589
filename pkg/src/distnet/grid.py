"""Geographic grid partition, station mapping, and grid filling.

Stations are scattered over an M x N lat/lon grid; most cells have no
monitor. ``interpolate_grid`` fills every cell from the station readings:
C1 cubic interpolation (ct.CloughTocher) inside the stations' convex
hull, inverse-distance weighting outside it, the station's own reading in
any station-bearing cell, and a final clamp at zero.

The whole fill is linear in the readings, so it is materialized once as a
(cells x stations) operator per station layout and reused hour after hour
by ``fill_series``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import QhullError

from .ct import CloughTocher
from .errors import ContractError, DataError
from .tensor import Tensor

log = logging.getLogger(__name__)

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQ = 111.320


@dataclass(frozen=True)
class GridSpec:
    """M x N lat/lon partition; cell (0, 0) has its corner at the origin."""

    rows: int
    cols: int
    origin_lat: float
    origin_lon: float
    cell_size: float = 0.1

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ContractError("grid must have at least one cell")
        if self.cell_size <= 0:
            raise ContractError("cell size must be positive")

    def cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        r = int(np.floor((lat - self.origin_lat) / self.cell_size))
        c = int(np.floor((lon - self.origin_lon) / self.cell_size))
        # the far edges belong to the last row/column
        if r == self.rows and np.isclose(lat, self.origin_lat + self.rows * self.cell_size):
            r -= 1
        if c == self.cols and np.isclose(lon, self.origin_lon + self.cols * self.cell_size):
            c -= 1
        return r, c

    def contains(self, lat: float, lon: float) -> bool:
        r, c = self.cell_of(lat, lon)
        return 0 <= r < self.rows and 0 <= c < self.cols

    def to_grid_coords(self, lat: float, lon: float) -> tuple[float, float]:
        return ((lat - self.origin_lat) / self.cell_size,
                (lon - self.origin_lon) / self.cell_size)

    def cell_centers(self) -> np.ndarray:
        """(rows*cols, 2) centers in grid coordinates, row-major."""
        r = np.arange(self.rows) + 0.5
        c = np.arange(self.cols) + 0.5
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return np.column_stack([rr.ravel(), cc.ravel()])


@dataclass(frozen=True)
class Station:
    station_id: str
    latitude: float
    longitude: float
    row: int
    col: int


@dataclass
class StationSet:
    stations: list[Station]
    grid: GridSpec

    def __post_init__(self):
        if not self.stations:
            raise ContractError("station set is empty")
        ids = [s.station_id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate station ids in registry")

    def __len__(self):
        return len(self.stations)

    def __iter__(self):
        return iter(self.stations)

    def positions(self) -> np.ndarray:
        """(R, 2) station positions in continuous grid coordinates."""
        return np.array([
            self.grid.to_grid_coords(s.latitude, s.longitude) for s in self.stations
        ])

    def ids(self) -> list[str]:
        return [s.station_id for s in self.stations]


def assign_cells(stations: list[tuple[str, float, float]], grid: GridSpec) -> StationSet:
    """Map (id, lat, lon) triples onto grid cells by floor division."""
    out = []
    for sid, lat, lon in stations:
        r, c = grid.cell_of(lat, lon)
        if not (0 <= r < grid.rows and 0 <= c < grid.cols):
            raise DataError(
                f"station {sid!r} at ({lat}, {lon}) lies outside the grid"
            )
        out.append(Station(sid, lat, lon, r, c))
    return StationSet(out, grid)


@dataclass
class ScatterField:
    """Station positions (grid coordinates) and one reading each."""

    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ContractError(f"positions must be (n, 2), got {self.positions.shape}")
        if self.values.shape != (len(self.positions),):
            raise ContractError("one value per position required")
        if len(self.values) == 0:
            raise ContractError("empty scatter field")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ContractError("readings must be finite and nonnegative")


def _merge_colocated(positions):
    """Group positions equal within 1e-9; returns (sites, site_of_station)."""
    keys = {}
    site_of = np.empty(len(positions), dtype=np.int64)
    sites = []
    for i, p in enumerate(positions):
        key = (round(p[0], 9), round(p[1], 9))
        if key not in keys:
            keys[key] = len(sites)
            sites.append(p)
        site_of[i] = keys[key]
    return np.array(sites), site_of


def _collinear(points) -> bool:
    if len(points) < 3:
        return True
    d = points[1:] - points[0]
    cross = d[:, 0, None] * d[None, :, 1] - d[:, 1, None] * d[None, :, 0]
    return bool(np.all(np.abs(cross) < 1e-12))


class InterpolationOperator:
    """Linear map readings -> full grid, fixed for one station layout."""

    def __init__(self, positions: np.ndarray, grid: GridSpec):
        positions = np.asarray(positions, dtype=np.float64)
        n = len(positions)
        if n == 0:
            raise ContractError("empty scatter field")
        self.grid = grid
        self.n_stations = n

        # canonical site ordering makes the operator independent of the
        # station order handed in (permutation invariance)
        sites, site_of = _merge_colocated(positions)
        order = np.lexsort((sites[:, 1], sites[:, 0]))
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        sites = sites[order]
        site_of = rank[site_of]

        # station -> site averaging
        dedup = np.zeros((len(sites), n))
        for i, s in enumerate(site_of):
            dedup[s, i] = 1.0
        dedup /= dedup.sum(axis=1, keepdims=True)

        centers = grid.cell_centers()
        a_sites = self._site_matrix(sites, centers)

        # station-bearing cells take the mean of their own stations' readings
        cell_rows: dict[int, list[int]] = {}
        for i, s in enumerate(site_of):
            p = positions[i]
            r = min(int(np.floor(p[0])), grid.rows - 1)
            c = min(int(np.floor(p[1])), grid.cols - 1)
            cell_rows.setdefault(r * grid.cols + c, []).append(i)
        a = a_sites @ dedup
        for flat, members in cell_rows.items():
            row = np.zeros(n)
            row[members] = 1.0 / len(members)
            a[flat] = row
        self.matrix = a

    def _site_matrix(self, sites, centers):
        n = len(sites)
        a = np.empty((len(centers), n))
        idw = self._idw_matrix(sites, centers)
        if _collinear(sites):
            return idw
        try:
            ct = CloughTocher(sites, np.zeros(n))
        except (QhullError, ContractError):
            return idw
        inside = ct.tri.find_simplex(centers) >= 0
        for j in range(n):
            basis = np.zeros(n)
            basis[j] = 1.0
            a[:, j] = ct.with_values(basis)(centers)
        a[~inside] = idw[~inside]
        return a

    @staticmethod
    def _idw_matrix(sites, centers):
        d2 = ((centers[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        w = 1.0 / np.maximum(d2, 1e-24)
        return w / w.sum(axis=1, keepdims=True)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """values (n,) or (n, T) -> grid (M, N) or (T, M, N), clamped >= 0."""
        values = np.asarray(values, dtype=np.float64)
        single = values.ndim == 1
        v = values.reshape(self.n_stations, -1)
        out = np.maximum(self.matrix @ v, 0.0)
        out = out.T.reshape(-1, self.grid.rows, self.grid.cols)
        return out[0] if single else out


def interpolate_grid(field: ScatterField, grid: GridSpec) -> Tensor:
    """Fill every grid cell from the scattered readings."""
    op = InterpolationOperator(field.positions, grid)
    return Tensor(op.apply(field.values))


def neighbor_aggregate(field: ScatterField, weather_cells: np.ndarray,
                       center: Station, grid: GridSpec,
                       radius_km: float = 10.0, sectors: int = 8) -> np.ndarray:
    """Sector means of readings and weather around a center station.

    Space within ``radius_km`` of the center is cut into ``sectors``
    azimuthal wedges (sector 0 centered on north, clockwise). Each wedge
    yields the mean pollutant reading of the stations it contains and the
    mean of their cells' weather vectors; empty wedges fall back to the
    center's own reading and cell weather.
    """
    if radius_km <= 0:
        raise ContractError("radius must be positive")
    weather_cells = np.asarray(weather_cells, dtype=np.float64)
    n_weather = weather_cells.shape[2]
    half = 360.0 / sectors / 2.0

    center_pos = np.array(grid.to_grid_coords(center.latitude, center.longitude))
    dmatch = np.abs(field.positions - center_pos).max(axis=1)
    own = np.where(dmatch < 1e-9)[0]
    if own.size == 0:
        raise ContractError(
            f"center station {center.station_id!r} has no reading in the field"
        )
    center_vals = np.concatenate([
        [field.values[own].mean()], weather_cells[center.row, center.col]
    ])

    cos_lat = np.cos(np.radians(center.latitude))
    out = np.tile(center_vals, sectors).astype(np.float64)
    members: list[list[int]] = [[] for _ in range(sectors)]
    for i, pos in enumerate(field.positions):
        if i in own:
            continue
        dlat = (pos[0] - center_pos[0]) * grid.cell_size
        dlon = (pos[1] - center_pos[1]) * grid.cell_size
        dy = dlat * KM_PER_DEG_LAT
        dx = dlon * KM_PER_DEG_LON_EQ * cos_lat
        dist = float(np.hypot(dx, dy))
        if dist > radius_km or dist == 0.0:
            continue
        bearing = np.degrees(np.arctan2(dx, dy)) % 360.0
        members[int(((bearing + half) % 360.0) // (2 * half))].append(i)

    for s, idx in enumerate(members):
        if not idx:
            continue
        r = np.clip(np.floor(field.positions[idx, 0]).astype(int), 0, grid.rows - 1)
        c = np.clip(np.floor(field.positions[idx, 1]).astype(int), 0, grid.cols - 1)
        sector_vals = np.concatenate([
            [field.values[idx].mean()], weather_cells[r, c].mean(axis=0)
        ])
        out[s * (1 + n_weather):(s + 1) * (1 + n_weather)] = sector_vals
    return out


def fill_series(readings: np.ndarray, stations: StationSet, grid: GridSpec) -> Tensor:
    """Per-hour grid filling for a (T, R) reading matrix (NaN = missing).

    Hours with no readings at all are bridged by per-cell linear
    interpolation in time; gaps touching the series boundary hold the
    nearest filled hour and are logged.
    """
    readings = np.asarray(readings, dtype=np.float64)
    if readings.ndim != 2 or readings.shape[1] != len(stations):
        raise ContractError(
            f"readings must be (T, {len(stations)}), got {readings.shape}"
        )
    hours = readings.shape[0]
    positions = stations.positions()
    out = np.empty((hours, grid.rows, grid.cols))
    valid = np.zeros(hours, dtype=bool)

    ops: dict[tuple[int, ...], InterpolationOperator] = {}
    masks = ~np.isnan(readings)
    groups: dict[tuple[int, ...], list[int]] = {}
    for t in range(hours):
        present = tuple(np.where(masks[t])[0])
        if not present:
            continue
        groups.setdefault(present, []).append(t)
    for present, ts in groups.items():
        key = present
        if key not in ops:
            ops[key] = InterpolationOperator(positions[list(present)], grid)
        vals = readings[np.ix_(ts, list(present))].T
        out[ts] = ops[key].apply(vals)
        valid[np.asarray(ts)] = True

    if not valid.any():
        raise ContractError("no hour has any reading")
    if not valid.all():
        flat = out.reshape(hours, -1)
        good = np.where(valid)[0]
        missing = np.where(~valid)[0]
        before = good[0]
        after = good[-1]
        if missing.size:
            log.warning("filling %d empty hours by temporal interpolation", missing.size)
        for cell in range(flat.shape[1]):
            flat[missing, cell] = np.interp(missing, good, flat[good, cell])
        if (missing < before).any() or (missing > after).any():
            log.warning("series boundary gap held constant from nearest valid hour")
    return Tensor(out)
