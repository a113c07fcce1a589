"""Synthetic pollutant fields for desk-scale end-to-end experiments.

An explicit finite-difference advection-diffusion solver drives each
pollutant over the grid: first-order upwind advection under a smoothly
rotating wind, 5-point diffusion, diurnal point sources, reflecting
(zero-flux) boundaries. Both transport terms are written in flux form, so
with zero sources the scheme conserves mass to rounding. Weather channels
derive from the same wind and temperature processes. Station readings
sample the true field at their cells plus clipped Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

MAX_SUBSTEPS = 400
STABILITY_BUDGET = 0.9  # sum of diffusion + CFL numbers per substep


@dataclass(frozen=True)
class SourceSpec:
    row: int
    col: int
    rate: float            # emission per hour at the source cell
    peak_hour: float = 8.0
    amplitude: float = 0.6  # relative diurnal modulation, in [0, 1]


@dataclass(frozen=True)
class PollutantSpec:
    name: str
    background: float
    diffusion: float       # km^2 / h
    sources: tuple[SourceSpec, ...]
    noise_std: float
    decay: float = 0.0     # deposition/washout rate per hour; keeps the
    #                        closed box from accumulating source mass forever


@dataclass(frozen=True)
class SynthConfig:
    rows: int
    cols: int
    hours: int
    n_stations: int
    seed: int
    pollutants: tuple[PollutantSpec, ...]
    cell_km: float = 10.0
    wind_speed_mean: float = 12.0     # km/h
    wind_speed_amp: float = 8.0
    wind_speed_period: float = 37.0   # hours
    wind_rotate_period: float = 61.0
    origin_lat: float = 39.4
    origin_lon: float = 115.7
    cell_size_deg: float = 0.1
    start: str = "2017-01-01T00"
    spinup_hours: int = 48
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ConfigError("synthetic grid needs at least 2x2 cells")
        if self.n_stations < 1 or self.n_stations > self.rows * self.cols:
            raise ConfigError("station count must fit the grid")
        if self.hours < 1:
            raise ConfigError("hours must be positive")
        for p in self.pollutants:
            if p.diffusion < 0 or p.background < 0 or p.noise_std < 0:
                raise ConfigError(f"{p.name}: rates and noise must be nonnegative")
            for s in p.sources:
                if not (0 <= s.row < self.rows and 0 <= s.col < self.cols):
                    raise ConfigError(f"{p.name}: source outside grid")
                if s.rate < 0 or not (0 <= s.amplitude <= 1):
                    raise ConfigError(f"{p.name}: bad source rate/amplitude")


def _substeps(cfg: SynthConfig, diffusion: float) -> int:
    dx = cfg.cell_km
    vmax = cfg.wind_speed_mean + cfg.wind_speed_amp
    load = 4.0 * diffusion / dx ** 2 + 2.0 * vmax / dx
    n = max(1, int(np.ceil(load / STABILITY_BUDGET)))
    if n > MAX_SUBSTEPS:
        raise ConfigError(
            f"stability bound needs {n} substeps/hour (> {MAX_SUBSTEPS}); "
            f"requires diffusion*dt/dx^2 <= 0.25 and |v|*dt/dx bounded"
        )
    return n


def wind_at(cfg: SynthConfig, t_hours: float) -> tuple[float, float]:
    """Uniform wind vector (vx east, vy north) in km/h at time t."""
    speed = cfg.wind_speed_mean + cfg.wind_speed_amp * np.sin(
        2 * np.pi * t_hours / cfg.wind_speed_period)
    speed = max(speed, 0.0)
    angle = 2 * np.pi * t_hours / cfg.wind_rotate_period
    return speed * np.cos(angle), speed * np.sin(angle)


def _source_field(cfg: SynthConfig, spec: PollutantSpec, hour_of_day: float) -> np.ndarray:
    s = np.zeros((cfg.rows, cfg.cols))
    for src in spec.sources:
        mod = 1.0 + src.amplitude * np.cos(2 * np.pi * (hour_of_day - src.peak_hour) / 24.0)
        s[src.row, src.col] += src.rate * max(mod, 0.0)
    return s


def step_field(u: np.ndarray, vx: float, vy: float, diffusion: float,
               dx: float, dt: float, source: np.ndarray | None = None) -> np.ndarray:
    """One flux-form upwind + diffusion substep with zero-flux walls.

    Axis 0 is north (rows increase northward), axis 1 east.
    """
    m, n = u.shape
    # diffusion fluxes across interior faces
    fy = diffusion * np.diff(u, axis=0) / dx     # (m-1, n)
    fx = diffusion * np.diff(u, axis=1) / dx     # (m, n-1)
    # upwind advection across the same faces
    if vy >= 0:
        fy -= vy * u[:-1, :]
    else:
        fy -= vy * u[1:, :]
    if vx >= 0:
        fx -= vx * u[:, :-1]
    else:
        fx -= vx * u[:, 1:]
    out = u.copy()
    out[:-1, :] += dt / dx * fy
    out[1:, :] -= dt / dx * fy
    out[:, :-1] += dt / dx * fx
    out[:, 1:] -= dt / dx * fx
    if source is not None:
        out += dt * source
    return np.maximum(out, 0.0)


def simulate_pollutant(cfg: SynthConfig, spec: PollutantSpec) -> np.ndarray:
    """(hours, rows, cols) hourly true field, after spin-up."""
    n_sub = _substeps(cfg, spec.diffusion)
    dt = 1.0 / n_sub
    u = np.full((cfg.rows, cfg.cols), spec.background, dtype=np.float64)
    start_hod = float((np.datetime64(cfg.start, "h")
                       - np.datetime64(cfg.start, "D")).astype(int))
    out = np.empty((cfg.hours, cfg.rows, cfg.cols))
    total = cfg.spinup_hours + cfg.hours
    for h in range(total):
        t_abs = h - cfg.spinup_hours
        for k in range(n_sub):
            t = t_abs + k * dt
            vx, vy = wind_at(cfg, t)
            src = _source_field(cfg, spec, (start_hod + t) % 24.0)
            u = step_field(u, vx, vy, spec.diffusion, cfg.cell_km, dt, src)
        if t_abs >= 0:
            out[t_abs] = u
    return out


def synth_weather(cfg: SynthConfig) -> np.ndarray:
    """(hours, rows, cols, 6) raw weather channels for the recorded span."""
    hours = np.arange(cfg.hours, dtype=np.float64)
    start_hod = float((np.datetime64(cfg.start, "h")
                       - np.datetime64(cfg.start, "D")).astype(int))
    hod = (start_hod + hours) % 24.0
    season = np.sin(2 * np.pi * hours / (24.0 * 120.0))
    temp_base = 12.0 + 10.0 * season + 6.0 * np.sin(2 * np.pi * (hod - 15.0) / 24.0)
    pressure = 1013.0 + 8.0 * np.sin(2 * np.pi * hours / 201.0)
    humidity = np.clip(60.0 - 1.5 * (temp_base - 12.0)
                       + 25.0 * np.sin(2 * np.pi * hours / 97.0), 5.0, 100.0)
    wind = np.array([wind_at(cfg, float(t)) for t in hours])
    speed_ms = np.hypot(wind[:, 0], wind[:, 1]) / 3.6
    direction = np.degrees(np.arctan2(wind[:, 0], wind[:, 1])) % 360.0
    condition = np.digitize(humidity, [40.0, 60.0, 80.0])

    rows = np.arange(cfg.rows)[None, :, None]
    out = np.empty((cfg.hours, cfg.rows, cfg.cols, 6))
    # mild north-south temperature gradient makes the channel spatial
    out[..., 0] = temp_base[:, None, None] - 0.15 * rows
    out[..., 1] = pressure[:, None, None] + 0.05 * rows
    out[..., 2] = humidity[:, None, None]
    out[..., 3] = speed_ms[:, None, None]
    out[..., 4] = direction[:, None, None]
    out[..., 5] = condition[:, None, None]
    return out


def _place_stations(cfg: SynthConfig, rng: np.random.Generator):
    cells = rng.choice(cfg.rows * cfg.cols, size=cfg.n_stations, replace=False)
    stations = []
    for i, cell in enumerate(sorted(cells.tolist())):
        r, c = divmod(cell, cfg.cols)
        lat = cfg.origin_lat + (r + 0.5) * cfg.cell_size_deg
        lon = cfg.origin_lon + (c + 0.5) * cfg.cell_size_deg
        stations.append((f"s{i:03d}", lat, lon, r, c))
    return stations


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write the full dataset (CSVs + manifest) and return the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    stations = _place_stations(cfg, rng)
    times = np.datetime64(cfg.start, "h") + np.arange(cfg.hours)

    fields = {}
    readings = {}
    for spec in cfg.pollutants:
        truth = simulate_pollutant(cfg, spec)
        fields[spec.name] = truth
        at_stations = truth[:, [s[3] for s in stations], [s[4] for s in stations]]
        noise = rng.normal(0.0, 1.0, size=at_stations.shape)
        noise = np.clip(noise, -3.0, 3.0) * spec.noise_std
        readings[spec.name] = np.maximum(at_stations + noise, 0.0)

    with open(out / "stations.csv", "w") as fh:
        fh.write("station_id,latitude,longitude\n")
        for sid, lat, lon, _, _ in stations:
            fh.write(f"{sid},{lat!r},{lon!r}\n")

    names = [spec.name for spec in cfg.pollutants]
    with open(out / "pollution.csv", "w") as fh:
        fh.write("timestamp," + "station_id," + ",".join(names) + "\n")
        for t, ts in enumerate(times):
            for i, (sid, *_rest) in enumerate(stations):
                vals = ",".join(repr(float(readings[n][t, i])) for n in names)
                fh.write(f"{ts},{sid},{vals}\n")

    weather = synth_weather(cfg)
    with open(out / "weather.csv", "w") as fh:
        fh.write("timestamp,row,col,temperature,pressure,humidity,"
                 "wind_speed,wind_direction,condition_id\n")
        for t, ts in enumerate(times):
            for r in range(cfg.rows):
                for c in range(cfg.cols):
                    w = weather[t, r, c]
                    fh.write(f"{ts},{r},{c},{w[0]:.4f},{w[1]:.4f},{w[2]:.4f},"
                             f"{w[3]:.4f},{w[4]:.4f},{int(w[5])}\n")

    truth_files = {}
    for name, truth in fields.items():
        fname = f"truth_{name}.csv"
        truth_files[name] = fname
        with open(out / fname, "w") as fh:
            fh.write("timestamp,row,col,value\n")
            for t, ts in enumerate(times):
                for r in range(cfg.rows):
                    for c in range(cfg.cols):
                        fh.write(f"{ts},{r},{c},{truth[t, r, c]!r}\n")

    cutoff_idx = min(int(cfg.hours * cfg.train_fraction), cfg.hours - 1)
    manifest = {
        "stations_csv": "stations.csv",
        "pollution_csv": "pollution.csv",
        "weather_csv": "weather.csv",
        "truth_csvs": truth_files,
        "grid": {"rows": cfg.rows, "cols": cfg.cols,
                 "origin_lat": cfg.origin_lat, "origin_lon": cfg.origin_lon,
                 "cell_size": cfg.cell_size_deg},
        "train_cutoff": str(times[cutoff_idx]),
        "condition_vocab": 4,
        "pollutants": names,
        "generator": {"seed": cfg.seed, "config": _config_dict(cfg)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["pollutants"] = [
        {**asdict(p), "sources": [asdict(s) for s in p.sources]}
        for p in cfg.pollutants
    ]
    return d


def _default_pollutants(rows: int, cols: int) -> tuple[PollutantSpec, ...]:
    r2, c2 = rows // 2, cols // 2
    pm_sources = (
        SourceSpec(row=r2, col=max(c2 - 2, 0), rate=26.0, peak_hour=8.0),
        SourceSpec(row=max(r2 - 2, 0), col=min(c2 + 2, cols - 1), rate=18.0,
                   peak_hour=19.0, amplitude=0.8),
    )
    return (
        PollutantSpec("pm25", background=22.0, diffusion=7.0,
                      sources=pm_sources, noise_std=1.5),
        PollutantSpec("pm10", background=45.0, diffusion=6.0,
                      sources=tuple(replace(s, rate=2.1 * s.rate) for s in pm_sources),
                      noise_std=3.0),
        PollutantSpec("o3", background=35.0, diffusion=10.0,
                      sources=(SourceSpec(row=min(r2 + 1, rows - 1), col=c2,
                                          rate=20.0, peak_hour=13.0, amplitude=1.0),),
                      noise_std=2.0),
    )


def scenario_presets() -> dict[str, SynthConfig]:
    """Named generator configurations used throughout the tests and CLI."""
    tiny = SynthConfig(
        rows=6, cols=6, hours=960, n_stations=5, seed=0,
        pollutants=_default_pollutants(6, 6), train_fraction=0.8,
    )
    beijing_like = SynthConfig(
        rows=11, cols=12, hours=12000, n_stations=35, seed=0,
        pollutants=_default_pollutants(11, 12), train_fraction=0.94,
    )
    return {"tiny": tiny, "beijing-like": beijing_like}


def preset(name: str, seed: int | None = None) -> SynthConfig:
    presets = scenario_presets()
    if name not in presets:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(presets)}")
    cfg = presets[name]
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg
