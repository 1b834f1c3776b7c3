"""Synthetic storm-surge dataset generation and dataset file I/O.

Stands in for a hydrodynamic simulation database. Each storm is a straight
track crossing the coastline at a configured landfall step, with constant
intensity (central pressure deficit) and size (radius of maximum winds)
before landfall and a linear decline after. The surge "truth" is a smooth
closed-form field: a Gaussian bump in distance from the storm center,
scaled by intensity, ramped in from zero at the start of the series and
exponentially damped after landfall. It is deterministic, cheap, and
parameter-dependent, which is all the emulation machinery needs.

The save-point grid is a coastal rectangle: row 0 is the waterline layer,
higher rows sit further inland, columns run alongshore. Save points are
indexed row-major.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, DataError, VersionError

DATASET_FORMAT_VERSION = 1

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQUATOR = 111.320

# post-landfall linear decline targets, as fractions of the pre-landfall value
DP_END_FRACTION = 0.5
RMW_END_FRACTION = 0.7


def equirect_km(lat_a, lon_a, lat_b, lon_b, ref_lat_deg: float) -> np.ndarray:
    """Equirectangular distance in km with a fixed reference latitude.

    Using one fixed latitude for the longitude scaling keeps the metric
    translation-invariant, which is accurate enough at regional extents.
    """
    dy = (np.asarray(lat_a) - np.asarray(lat_b)) * KM_PER_DEG_LAT
    dx = (np.asarray(lon_a) - np.asarray(lon_b)) * KM_PER_DEG_LON_EQUATOR * np.cos(
        np.deg2rad(ref_lat_deg)
    )
    return np.hypot(dx, dy)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular save-point grid, row-major, row 0 on the waterline."""

    grid_h: int = 24
    grid_w: int = 8
    lat0: float = 29.0  # latitude of the waterline row
    lon0: float = -95.0  # longitude of column 0
    dlat: float = 0.05  # row spacing, degrees inland (north)
    dlon: float = 0.15  # column spacing, degrees alongshore (east)

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.grid_h}x{self.grid_w}")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ConfigError("grid spacings must be positive")

    @property
    def n_sp(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def ref_lat(self) -> float:
        return self.lat0 + 0.5 * (self.grid_h - 1) * self.dlat

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """(lat, lon) per save point, row-major, each of length n_sp."""
        rows, cols = np.divmod(np.arange(self.n_sp), self.grid_w)
        return self.lat0 + rows * self.dlat, self.lon0 + cols * self.dlon

    def sp_index(self, row: int, col: int) -> int:
        if not (0 <= row < self.grid_h and 0 <= col < self.grid_w):
            raise ContractError(f"save point ({row}, {col}) outside {self.grid_h}x{self.grid_w}")
        return row * self.grid_w + col

    def to_dict(self) -> dict:
        return {
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "lat0": self.lat0,
            "lon0": self.lon0,
            "dlat": self.dlat,
            "dlon": self.dlon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            grid_h=int(d["grid_h"]),
            grid_w=int(d["grid_w"]),
            lat0=float(d["lat0"]),
            lon0=float(d["lon0"]),
            dlat=float(d["dlat"]),
            dlon=float(d["dlon"]),
        )


@dataclass(frozen=True)
class GeneratorConfig:
    """Everything needed to deterministically rebuild a dataset."""

    n_storms: int = 72
    n_test: int = 8
    n_steps: int = 40
    landfall_step: int = 29
    grid: GridSpec = GridSpec()
    seed: int = 0
    heading_range: tuple[float, float] = (-30.0, 30.0)  # degrees off shore-normal
    offset_km_range: tuple[float, float] = (-50.0, 50.0)  # landfall alongshore offset
    dp_range: tuple[float, float] = (20.0, 120.0)  # central pressure deficit, mb
    rmw_range: tuple[float, float] = (15.0, 80.0)  # radius of max winds, km
    speed_km_per_step: float = 18.0
    amplitude: float = 0.012  # peak surge per mb of pressure deficit, m/mb
    width_factor: float = 1.3  # surge footprint width as a multiple of rmw
    decay_rate: float = 0.10  # post-landfall exponential damping per step
    ramp_fraction: float = 0.10  # fraction of the series used to ramp in from zero

    def __post_init__(self):
        if not (0 < self.landfall_step < self.n_steps):
            raise ConfigError(
                f"landfall step {self.landfall_step} must lie inside (0, {self.n_steps})"
            )
        if self.n_storms < 1:
            raise ConfigError("need at least one storm")
        if not (0 <= self.n_test < self.n_storms):
            raise ConfigError(f"test count {self.n_test} must be below n_storms {self.n_storms}")
        for name, rng in (("heading", self.heading_range), ("offset", self.offset_km_range),
                          ("dp", self.dp_range), ("rmw", self.rmw_range)):
            if rng[0] > rng[1]:
                raise ConfigError(f"{name} range is empty: {rng}")
        if self.dp_range[0] <= 0 or self.rmw_range[0] <= 0:
            raise ConfigError("pressure deficit and radius ranges must stay positive")
        if self.amplitude <= 0 or self.width_factor <= 0 or self.speed_km_per_step <= 0:
            raise ConfigError("amplitude, width factor and speed must be positive")
        if self.decay_rate < 0 or not (0 < self.ramp_fraction < 1):
            raise ConfigError("decay rate must be >= 0 and ramp fraction in (0, 1)")

    @property
    def n_train(self) -> int:
        return self.n_storms - self.n_test

    @classmethod
    def desk_scale(cls, seed: int = 0) -> "GeneratorConfig":
        """The small seeded benchmark: 24x8 grid, 40 steps, 64 train + 8 test."""
        return cls(seed=seed)

    @classmethod
    def paper_scale(cls, seed: int = 0) -> "GeneratorConfig":
        """Full-proportion dataset: 120x40 grid, 125 steps, 500 train + 8 test."""
        return cls(
            n_storms=508,
            n_test=8,
            n_steps=125,
            landfall_step=90,
            grid=GridSpec(grid_h=120, grid_w=40, dlat=0.02, dlon=0.05),
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "n_storms": self.n_storms,
            "n_test": self.n_test,
            "n_steps": self.n_steps,
            "landfall_step": self.landfall_step,
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "heading_range": list(self.heading_range),
            "offset_km_range": list(self.offset_km_range),
            "dp_range": list(self.dp_range),
            "rmw_range": list(self.rmw_range),
            "speed_km_per_step": self.speed_km_per_step,
            "amplitude": self.amplitude,
            "width_factor": self.width_factor,
            "decay_rate": self.decay_rate,
            "ramp_fraction": self.ramp_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        try:
            return cls(
                n_storms=int(d["n_storms"]),
                n_test=int(d["n_test"]),
                n_steps=int(d["n_steps"]),
                landfall_step=int(d["landfall_step"]),
                grid=GridSpec.from_dict(d["grid"]),
                seed=int(d["seed"]),
                heading_range=tuple(float(v) for v in d["heading_range"]),
                offset_km_range=tuple(float(v) for v in d["offset_km_range"]),
                dp_range=tuple(float(v) for v in d["dp_range"]),
                rmw_range=tuple(float(v) for v in d["rmw_range"]),
                speed_km_per_step=float(d["speed_km_per_step"]),
                amplitude=float(d["amplitude"]),
                width_factor=float(d["width_factor"]),
                decay_rate=float(d["decay_rate"]),
                ramp_fraction=float(d["ramp_fraction"]),
            )
        except KeyError as e:
            raise ConfigError(f"generator description is missing field {e}") from e


@dataclass
class StormRecord:
    """One storm: per-step inputs [T, 4] (lat, lon, dp, rmw), surge labels
    [T, n_sp] in meters, and the landfall step index."""

    inputs: np.ndarray
    labels: np.ndarray
    landfall_step: int

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _ramp(t: np.ndarray, n_steps: int, ramp_fraction: float) -> np.ndarray:
    """Smoothstep from exactly 0 at step 0 to 1 at the end of the ramp window."""
    ramp_steps = max(1, round(ramp_fraction * n_steps))
    u = np.clip(t / ramp_steps, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def surge_oracle(track_latlon: np.ndarray, dp: np.ndarray, rmw: np.ndarray,
                 grid: GridSpec, cfg: GeneratorConfig) -> np.ndarray:
    """Closed-form surge field [T, n_sp] for a storm history.

    surge = amplitude * dp(t) * exp(-d^2 / (2 (width_factor*rmw(t))^2))
            * ramp(t) * exp(-decay_rate * max(0, t - landfall)).
    """
    track = np.asarray(track_latlon, dtype=np.float64)
    dp = np.asarray(dp, dtype=np.float64)
    rmw = np.asarray(rmw, dtype=np.float64)
    n_steps = track.shape[0]
    if track.shape != (n_steps, 2) or dp.shape != (n_steps,) or rmw.shape != (n_steps,):
        raise ContractError(
            f"surge_oracle: track {track.shape}, dp {dp.shape}, rmw {rmw.shape} do not align"
        )
    sp_lat, sp_lon = grid.coordinates()
    t = np.arange(n_steps, dtype=np.float64)
    d = equirect_km(sp_lat[None, :], sp_lon[None, :],
                    track[:, 0:1], track[:, 1:2], grid.ref_lat)  # [T, n_sp]
    width = cfg.width_factor * rmw  # [T]
    envelope = np.exp(-0.5 * (d / width[:, None]) ** 2)
    ramp = _ramp(t, n_steps, cfg.ramp_fraction)
    decay = np.exp(-cfg.decay_rate * np.maximum(0.0, t - cfg.landfall_step))
    return cfg.amplitude * dp[:, None] * envelope * (ramp * decay)[:, None]


def generate_storm(cfg: GeneratorConfig, storm_index: int) -> StormRecord:
    """Deterministically build one storm; the stream is seeded from
    (dataset seed, storm index)."""
    if storm_index < 0:
        raise ContractError(f"storm index must be >= 0, got {storm_index}")
    rng = np.random.default_rng([cfg.seed, storm_index])
    heading = np.deg2rad(rng.uniform(*cfg.heading_range))
    offset_km = rng.uniform(*cfg.offset_km_range)
    dp0 = rng.uniform(*cfg.dp_range)
    rmw0 = rng.uniform(*cfg.rmw_range)

    grid = cfg.grid
    t = np.arange(cfg.n_steps, dtype=np.float64)
    # landfall point on the waterline row, offset alongshore from grid center
    mid_lon = grid.lon0 + 0.5 * (grid.grid_w - 1) * grid.dlon
    lon_scale = KM_PER_DEG_LON_EQUATOR * np.cos(np.deg2rad(grid.ref_lat))
    landfall_lat = grid.lat0
    landfall_lon = mid_lon + offset_km / lon_scale
    # straight track at constant speed; heading 0 is shore-normal (due north)
    step_lat = cfg.speed_km_per_step * np.cos(heading) / KM_PER_DEG_LAT
    step_lon = cfg.speed_km_per_step * np.sin(heading) / lon_scale
    rel = t - cfg.landfall_step
    lat = landfall_lat + rel * step_lat
    lon = landfall_lon + rel * step_lon

    # intensity and size hold steady offshore, decline linearly after landfall
    after = np.maximum(0.0, rel) / max(1, cfg.n_steps - 1 - cfg.landfall_step)
    dp = dp0 * (1.0 - (1.0 - DP_END_FRACTION) * after)
    rmw = rmw0 * (1.0 - (1.0 - RMW_END_FRACTION) * after)

    inputs = np.column_stack([lat, lon, dp, rmw])
    track = np.column_stack([lat, lon])
    labels = surge_oracle(track, dp, rmw, grid, cfg)
    return StormRecord(inputs=inputs, labels=labels, landfall_step=cfg.landfall_step)


def generate_dataset(cfg: GeneratorConfig) -> list[StormRecord]:
    return [generate_storm(cfg, i) for i in range(cfg.n_storms)]


# ---------------------------------------------------------------------------
# landfall synchronization
# ---------------------------------------------------------------------------

def synchronize_landfall(record: StormRecord, target_step: int) -> StormRecord:
    """Shift a storm in time so its landfall sits on ``target_step``.

    Inputs are padded with their edge values; labels are padded with zeros
    at the head (no surge before the storm arrives) and edge values at the
    tail. Interior steps survive a shift-and-shift-back round trip exactly.
    """
    n_steps = record.n_steps
    if not (1 <= target_step <= n_steps - 1):
        raise ContractError(
            f"target landfall {target_step} outside [1, {n_steps - 1}]"
        )
    shift = target_step - record.landfall_step
    if shift == 0:
        return StormRecord(record.inputs.copy(), record.labels.copy(), record.landfall_step)

    src = np.arange(n_steps) - shift
    clipped = np.clip(src, 0, n_steps - 1)
    inputs = record.inputs[clipped].copy()
    labels = record.labels[clipped].copy()
    if shift > 0:
        labels[:shift] = 0.0  # pre-arrival surge
    return StormRecord(inputs=inputs, labels=labels, landfall_step=target_step)


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _parse_float(cell: str, path: str, line_no: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}:{line_no}: non-numeric cell '{cell}'") from None


def _inputs_name(i: int) -> str:
    return f"storm_{i:04d}_inputs.csv"


def _surge_name(i: int) -> str:
    return f"storm_{i:04d}_surge.csv"


def write_dataset(records: list[StormRecord], out_dir, cfg: GeneratorConfig):
    """Write one inputs CSV and one surge CSV per storm plus a manifest.

    Floats use shortest round-trip decimal text, so read_dataset recovers
    them exactly. The train/test split is the first n_train storm indices
    against the last n_test.
    """
    if len(records) != cfg.n_storms:
        raise ContractError(f"got {len(records)} records for a {cfg.n_storms}-storm config")
    os.makedirs(out_dir, exist_ok=True)
    for i, rec in enumerate(records):
        with open(os.path.join(out_dir, _inputs_name(i)), "w") as f:
            f.write("step,lat,lon,dp,rmw\n")
            for t in range(rec.n_steps):
                f.write(f"{t},{_format_row(rec.inputs[t])}\n")
        with open(os.path.join(out_dir, _surge_name(i)), "w") as f:
            for t in range(rec.n_steps):
                f.write(_format_row(rec.labels[t]) + "\n")
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "surgecast-dataset",
        "generator": cfg.to_dict(),
        "n_steps": cfg.n_steps,
        "n_sp": cfg.grid.n_sp,
        "grid_h": cfg.grid.grid_h,
        "grid_w": cfg.grid.grid_w,
        "landfall_step": cfg.landfall_step,
        "seed": cfg.seed,
        "train_ids": list(range(cfg.n_train)),
        "test_ids": list(range(cfg.n_train, cfg.n_storms)),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest.json in {data_dir}")
    try:
        with open(path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e}") from e
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise VersionError(
            f"{path} has format version {manifest.get('format_version')}, "
            f"this build reads {DATASET_FORMAT_VERSION}"
        )
    return manifest


def _read_storm(data_dir, index: int, n_steps: int, n_sp: int, landfall_step: int) -> StormRecord:
    in_path = os.path.join(data_dir, _inputs_name(index))
    surge_path = os.path.join(data_dir, _surge_name(index))
    for path in (in_path, surge_path):
        if not os.path.exists(path):
            raise DataError(f"manifest lists storm {index} but {path} is missing")

    with open(in_path) as f:
        lines = f.read().strip().splitlines()
    if len(lines) - 1 != n_steps:
        raise DataError(f"{in_path}: expected {n_steps} data rows, found {len(lines) - 1}")
    inputs = np.empty((n_steps, 4))
    for t, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != 5:
            raise DataError(f"{in_path}:{t + 2}: expected 5 columns, found {len(cells)}")
        inputs[t] = [_parse_float(c, in_path, t + 2) for c in cells[1:]]

    with open(surge_path) as f:
        lines = f.read().strip().splitlines()
    if len(lines) != n_steps:
        raise DataError(f"{surge_path}: expected {n_steps} rows, found {len(lines)}")
    labels = np.empty((n_steps, n_sp))
    for t, line in enumerate(lines):
        cells = line.split(",")
        if len(cells) != n_sp:
            raise DataError(f"{surge_path}:{t + 1}: expected {n_sp} columns, found {len(cells)}")
        labels[t] = [_parse_float(c, surge_path, t + 1) for c in cells]

    return StormRecord(inputs=inputs, labels=labels, landfall_step=landfall_step)


def read_dataset(data_dir) -> tuple[list[StormRecord], dict]:
    """Read every storm listed in the manifest; returns (records, manifest)."""
    manifest = read_manifest(data_dir)
    n_steps = int(manifest["n_steps"])
    n_sp = int(manifest["n_sp"])
    landfall = int(manifest["landfall_step"])
    ids = list(manifest["train_ids"]) + list(manifest["test_ids"])
    records = [_read_storm(data_dir, i, n_steps, n_sp, landfall) for i in sorted(ids)]
    return records, manifest


def load_split(data_dir) -> tuple[list[StormRecord], list[StormRecord], dict]:
    """Records split into (train, test) per the manifest."""
    records, manifest = read_dataset(data_dir)
    train = [records[i] for i in manifest["train_ids"]]
    test = [records[i] for i in manifest["test_ids"]]
    return train, test, manifest


def stack_inputs(records: list[StormRecord]) -> np.ndarray:
    return np.stack([r.inputs for r in records])


def stack_labels(records: list[StormRecord]) -> np.ndarray:
    return np.stack([r.labels for r in records])
