"""Synthetic PV / load / weather dataset, CSV persistence and the train/test split.

Weather is shared by all sites of the feeder: a daily cloudiness index
follows a mean-reverting process with day-to-day persistence, plus an
hourly perturbation per site. Clear-sky irradiance is a truncated cosine
around solar noon whose width and height follow the season. PV output is
capacity times irradiance fraction with a linear temperature derating.
Forecast features are the truth corrupted by seeded noise, so predictors
always face irreducible error.

The aggregate load follows a weekday or weekend profile scaled by a
temperature-driven seasonal factor and day-level and hourly noise. Reactive
demand follows from a fixed power factor.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from pathlib import Path

import numpy as np

from .seeding import rng_for

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HOURS = 24
MIN_DAYS = 20
POWER_FACTOR = 0.95
TAN_PHI = math.tan(math.acos(POWER_FACTOR))

_BLOCKS = ("past", "temp", "irr", "target")
COLUMNS = ["day", "kind"] + [f"{blk}_h{h:02d}" for blk in _BLOCKS for h in range(HOURS)]


class SchemaError(ValueError):
    pass


class MalformedRowError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclasses.dataclass(frozen=True)
class GeneratorParams:
    start_day_of_year: int = 60
    peak_irradiance: float = 1000.0  # W/m2 at summer solar noon, clear sky
    cloud_mean: float = 0.35
    cloud_persistence: float = 0.6
    cloud_daily_sd: float = 0.25
    cloud_hourly_sd: float = 0.12
    temp_coeff: float = 0.004  # per degC above 25
    forecast_irr_sd: float = 0.10  # clear-sky index units
    forecast_irr_bias_sd: float = 0.12
    forecast_temp_sd: float = 1.5
    load_peak_kw: float = 3700.0
    load_daily_sd: float = 0.05
    load_hourly_sd: float = 0.02

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# normalized aggregate demand shapes (peak 1.0), hour 0 = 00:00-01:00
_WEEKDAY = np.array([0.52, 0.48, 0.46, 0.45, 0.47, 0.53, 0.64, 0.76, 0.82, 0.80, 0.77, 0.76,
                     0.75, 0.74, 0.73, 0.74, 0.78, 0.86, 0.95, 1.00, 0.97, 0.88, 0.74, 0.61])
_WEEKEND = np.array([0.55, 0.50, 0.47, 0.46, 0.46, 0.48, 0.53, 0.60, 0.68, 0.74, 0.77, 0.78,
                     0.77, 0.75, 0.73, 0.73, 0.76, 0.83, 0.91, 0.95, 0.93, 0.85, 0.73, 0.62])


@dataclasses.dataclass(frozen=True)
class DayRecord:
    day: int
    pv_past: np.ndarray  # (n_pv, 24) kW
    pv_temp: np.ndarray  # (n_pv, 24) degC
    pv_irr: np.ndarray  # (n_pv, 24) W/m2
    pv_target: np.ndarray  # (n_pv, 24) kW
    load_past: np.ndarray  # (24,) kW
    load_temp: np.ndarray  # (24,) degC
    load_target: np.ndarray  # (24,) kW

    @property
    def load_q_target(self) -> np.ndarray:
        return self.load_target * TAN_PHI


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Chronological days; arrays are indexed ``[day, (site,) hour]``."""

    day: np.ndarray
    pv_capacity: np.ndarray
    pv_past: np.ndarray
    pv_temp: np.ndarray
    pv_irr: np.ndarray
    pv_target: np.ndarray
    load_past: np.ndarray
    load_temp: np.ndarray
    load_target: np.ndarray
    split: int
    provenance: dict

    def __post_init__(self):
        validate_dataset(self)

    @property
    def n_days(self) -> int:
        return len(self.day)

    @property
    def n_pv(self) -> int:
        return len(self.pv_capacity)

    @property
    def train_idx(self) -> np.ndarray:
        return np.arange(self.split)

    @property
    def test_idx(self) -> np.ndarray:
        return np.arange(self.split, self.n_days)

    def record(self, i: int) -> DayRecord:
        return DayRecord(int(self.day[i]), self.pv_past[i], self.pv_temp[i], self.pv_irr[i],
                         self.pv_target[i], self.load_past[i], self.load_temp[i], self.load_target[i])

    def pv_features(self, site: int, idx=None) -> np.ndarray:
        """``(days, 72)``: past-day power, forecast temperature, forecast irradiance."""
        idx = slice(None) if idx is None else idx
        return np.concatenate([self.pv_past[idx, site], self.pv_temp[idx, site], self.pv_irr[idx, site]], axis=-1)

    def load_features(self, idx=None) -> np.ndarray:
        """``(days, 48)``: past-day load and forecast temperature."""
        idx = slice(None) if idx is None else idx
        return np.concatenate([self.load_past[idx], self.load_temp[idx]], axis=-1)

    def with_split(self, split: int) -> "Dataset":
        return dataclasses.replace(self, split=int(split))


def chronological_split(n_days: int, train_fraction: float = 0.8) -> int:
    split = int(round(n_days * train_fraction))
    return min(max(split, 1), n_days - 1)


def validate_dataset(ds: Dataset) -> None:
    D, n_pv = len(ds.day), len(ds.pv_capacity)
    for name in ("pv_past", "pv_temp", "pv_irr", "pv_target"):
        if getattr(ds, name).shape != (D, n_pv, HOURS):
            raise SchemaError(f"{name} has shape {getattr(ds, name).shape}, expected {(D, n_pv, HOURS)}")
    for name in ("load_past", "load_temp", "load_target"):
        if getattr(ds, name).shape != (D, HOURS):
            raise SchemaError(f"{name} has shape {getattr(ds, name).shape}, expected {(D, HOURS)}")
    if np.any(np.diff(ds.day) <= 0):
        raise SchemaError("days must be strictly increasing")
    if not 0 < ds.split < D:
        raise SchemaError(f"split {ds.split} leaves an empty train or test part")
    if np.any(ds.pv_capacity <= 0):
        raise SchemaError("PV capacities must be positive")
    cap = ds.pv_capacity[None, :, None]
    for name in ("pv_past", "pv_target"):
        arr = getattr(ds, name)
        if np.any(arr < 0) or np.any(arr > cap * (1 + 1e-12)):
            raise SchemaError(f"{name} outside [0, capacity]")
    if np.any(ds.load_target < 0) or np.any(ds.load_past < 0) or np.any(ds.pv_irr < 0):
        raise SchemaError("negative power or irradiance")
    for name in ("pv_past", "pv_temp", "pv_irr", "pv_target", "load_past", "load_temp", "load_target"):
        if not np.all(np.isfinite(getattr(ds, name))):
            raise SchemaError(f"{name} contains NaN or inf")


def _clear_sky(doy: np.ndarray, params: GeneratorParams) -> np.ndarray:
    """Clear-sky irradiance ``(days, 24)`` from a truncated cosine around noon."""
    season = np.sin(2 * np.pi * (doy - 80) / 365.0)
    daylength = 12.0 + 2.5 * season
    height = params.peak_irradiance * (0.8 + 0.2 * season)
    t = np.arange(HOURS) + 0.5
    phase = np.pi * (t[None, :] - 12.5) / daylength[:, None]
    shape = np.where(np.abs(phase) < np.pi / 2, np.cos(phase), 0.0)
    return height[:, None] * shape


def _ar1(rng, shape, rho, sd, axis=-1):
    """Stationary AR(1) noise along ``axis``."""
    e = rng.normal(0.0, sd, size=shape)
    out = np.empty(shape)
    e = np.moveaxis(e, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[0] = e[0]
    scale = math.sqrt(1 - rho ** 2)
    for k in range(1, e.shape[0]):
        o[k] = rho * o[k - 1] + scale * e[k]
    return out


def generate_synthetic(seed: int, days: int, pv_capacity, params: GeneratorParams | None = None,
                       train_fraction: float = 0.8) -> Dataset:
    """Seeded synthetic dataset of ``days`` consecutive days for the given PV sites."""
    if days < MIN_DAYS:
        raise ValueError(f"need at least {MIN_DAYS} days, got {days}")
    params = params or GeneratorParams()
    cap = np.asarray(pv_capacity, dtype=float)
    if cap.ndim != 1 or cap.size == 0 or np.any(cap <= 0):
        raise ValueError("PV capacities must be a non-empty list of positive values")
    n_pv = cap.size
    D = days + 1  # one warm-up day supplies the first past-day features
    doy = params.start_day_of_year - 1 + np.arange(D)

    # weather
    rng_w = rng_for(seed, "weather")
    cloud_day = np.empty(D)
    c = params.cloud_mean
    for d in range(D):
        c = params.cloud_persistence * c + (1 - params.cloud_persistence) * params.cloud_mean \
            + params.cloud_daily_sd * rng_w.normal()
        c = min(max(c, 0.0), 1.0)
        cloud_day[d] = c
    hourly = _ar1(rng_w, (D, n_pv, HOURS), 0.7, params.cloud_hourly_sd)
    cloud = np.clip(cloud_day[:, None, None] + hourly, 0.0, 1.0)
    kt = 1.0 - 0.8 * cloud
    clear = _clear_sky(doy, params)
    irr = clear[:, None, :] * kt

    season_t = 15.0 + 10.0 * np.sin(2 * np.pi * (doy - 110) / 365.0)
    anomaly = _ar1(rng_w, (D,), 0.7, 3.0)
    t = np.arange(HOURS) + 0.5
    diurnal = 5.0 * np.sin(2 * np.pi * (t - 9.0) / 24.0)
    temp_sys = season_t[:, None] + anomaly[:, None] + diurnal[None, :] - 3.0 * cloud_day[:, None]
    temp = temp_sys[:, None, :] + rng_w.normal(0.0, 0.3, size=(D, n_pv, HOURS))

    t_cell = temp + irr / 800.0 * 25.0
    derate = 1.0 - params.temp_coeff * (t_cell - 25.0)
    pv = np.clip(cap[None, :, None] * irr / 1000.0 * derate, 0.0, cap[None, :, None])
    pv[clear[:, None, :].repeat(n_pv, axis=1) <= 0] = 0.0

    # forecasts
    rng_f = rng_for(seed, "forecast")
    bias = rng_f.normal(0.0, params.forecast_irr_bias_sd, size=(D, n_pv, 1))
    kt_fc = np.clip(kt + bias + _ar1(rng_f, (D, n_pv, HOURS), 0.8, params.forecast_irr_sd), 0.05, 1.0)
    irr_fc = clear[:, None, :] * kt_fc
    temp_bias = rng_f.normal(0.0, 1.0, size=(D, 1))
    temp_fc = temp + temp_bias[:, :, None] + rng_f.normal(0.0, params.forecast_temp_sd, size=(D, n_pv, HOURS))
    load_temp_fc = temp_sys + temp_bias + rng_f.normal(0.0, params.forecast_temp_sd, size=(D, HOURS))

    # load
    rng_l = rng_for(seed, "load")
    weekday = (np.arange(D) % 7) < 5
    profile = np.where(weekday[:, None], _WEEKDAY[None, :], _WEEKEND[None, :])
    t_max = temp_sys.max(axis=1)
    t_mean = temp_sys.mean(axis=1)
    weather = 0.015 * np.maximum(t_max - 22.0, 0.0) + 0.01 * np.maximum(12.0 - t_mean, 0.0)
    daily = np.clip(0.78 + weather + _ar1(rng_l, (D,), 0.5, params.load_daily_sd), 0.55, 0.93)
    hourly_l = np.clip(rng_l.normal(0.0, params.load_hourly_sd, size=(D, HOURS)), -0.03, 0.03)
    load = params.load_peak_kw * profile * daily[:, None] * (1.0 + hourly_l)

    ds = Dataset(
        day=np.arange(days),
        pv_capacity=cap,
        pv_past=pv[:-1], pv_temp=temp_fc[1:], pv_irr=irr_fc[1:], pv_target=pv[1:],
        load_past=load[:-1], load_temp=load_temp_fc[1:], load_target=load[1:],
        split=chronological_split(days, train_fraction),
        provenance={"generator": "synthetic", "seed": int(seed), "days": int(days),
                    "params": params.to_dict(), "train_fraction": train_fraction},
    )
    return ds


def capacity_factor(ds: Dataset) -> float:
    return float(ds.pv_target.sum() / (ds.pv_capacity.sum() * ds.n_days * HOURS))


# persistence

def _fmt(x: float) -> str:
    return repr(float(x))


def _rows(ds: Dataset):
    empty = [""] * HOURS
    for i in range(ds.n_days):
        for s in range(ds.n_pv):
            yield ([str(int(ds.day[i])), f"pv{s + 1}"]
                   + [_fmt(v) for v in ds.pv_past[i, s]] + [_fmt(v) for v in ds.pv_temp[i, s]]
                   + [_fmt(v) for v in ds.pv_irr[i, s]] + [_fmt(v) for v in ds.pv_target[i, s]])
        yield ([str(int(ds.day[i])), "load"]
               + [_fmt(v) for v in ds.load_past[i]] + [_fmt(v) for v in ds.load_temp[i]]
               + empty + [_fmt(v) for v in ds.load_target[i]])


def dataset_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    w.writerows(_rows(ds))
    return buf.getvalue()


def save_dataset(ds: Dataset, directory: str | Path, name: str = "dataset") -> Path:
    """Write ``<name>.csv`` and ``<name>.manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    text = dataset_csv(ds)
    csv_path = directory / f"{name}.csv"
    csv_path.write_bytes(text.encode("utf-8"))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "csv": csv_path.name,
        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "columns": COLUMNS,
        "n_days": ds.n_days,
        "pv_capacity_kw": [float(c) for c in ds.pv_capacity],
        "split": ds.split,
        "power_factor": POWER_FACTOR,
        "provenance": ds.provenance,
    }
    man_path = directory / f"{name}.manifest.json"
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return man_path


def _parse_float(tok: str, line: int, col: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise MalformedRowError(line, f"column {col}: cannot parse {tok!r}") from None


def load_dataset(manifest_path: str | Path) -> Dataset:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    for key in ("csv", "pv_capacity_kw", "split", "n_days"):
        if key not in manifest:
            raise SchemaError(f"manifest is missing {key!r}")
    cap = np.array(manifest["pv_capacity_kw"], dtype=float)
    n_pv, D = len(cap), int(manifest["n_days"])
    kinds = [f"pv{s + 1}" for s in range(n_pv)] + ["load"]
    text = (manifest_path.parent / manifest["csv"]).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("dataset file is empty") from None
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column {missing[0]!r}")
    pos = {c: header.index(c) for c in COLUMNS}
    arrays = {k: np.full((D, n_pv, HOURS), np.nan) for k in ("pv_past", "pv_temp", "pv_irr", "pv_target")}
    arrays.update({k: np.full((D, HOURS), np.nan) for k in ("load_past", "load_temp", "load_target")})
    days: list[int] = []
    expected = [(d, k) for d in range(D) for k in kinds]
    n_rows = 0
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRowError(line, f"expected {len(header)} fields, found {len(row)}")
        if n_rows >= len(expected):
            raise MalformedRowError(line, "more rows than the manifest declares")
        try:
            day = int(row[pos["day"]])
        except ValueError:
            raise MalformedRowError(line, f"bad day {row[pos['day']]!r}") from None
        kind = row[pos["kind"]]
        i_day, exp_kind = expected[n_rows][0], expected[n_rows][1]
        if kind != exp_kind:
            raise MalformedRowError(line, f"expected kind {exp_kind!r}, found {kind!r}")
        if kind == kinds[0]:
            days.append(day)
        elif not days or day != days[-1]:
            raise MalformedRowError(line, "rows of one day must be contiguous")
        for blk in _BLOCKS:
            cols = [f"{blk}_h{h:02d}" for h in range(HOURS)]
            if kind == "load" and blk == "irr":
                continue
            vals = [_parse_float(row[pos[c]], line, c) for c in cols]
            if kind == "load":
                arrays[f"load_{blk}"][i_day] = vals
            else:
                arrays[f"pv_{blk}"][i_day, kinds.index(kind)] = vals
        n_rows += 1
    if n_rows != len(expected):
        raise MalformedRowError(n_rows + 2, f"file ends after {n_rows} of {len(expected)} rows")
    return Dataset(day=np.array(days), pv_capacity=cap, split=int(manifest["split"]),
                   provenance=manifest.get("provenance", {}), **arrays)
