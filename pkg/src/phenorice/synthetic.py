"""Synthetic districts with known phenology, for end-to-end checks and experiments.

Per-cover index trajectories are built from piecewise-linear NDVI/LSWI/MNDWI
knots (days since season start), perturbed per field and per pixel, and
converted to band reflectances that reproduce those indices exactly.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .calibration import LITERATURE_BOUNDS, ReferencePolygon
from .config import DistrictCalibration, StageRule, TpaParams, TspParams
from .phenology import STAGES, Stage, StageWindows
from .raster import GeoGrid, ReflectanceCube

SEASON_START = dt.date(2018, 12, 1)

# (day, value) knots per cover type
PROFILES = {
    "rice": {
        "NDVI": [(0, 0.18), (30, 0.18), (45, 0.30), (70, 0.45), (95, 0.83), (110, 0.73), (150, 0.18)],
        "LSWI": [(0, 0.30), (40, 0.40), (70, 0.35), (110, 0.15), (150, -0.05)],
        "MNDWI": [(0, 0.20), (40, 0.15), (60, -0.10), (110, -0.38), (150, -0.45)],
    },
    "flat_high": {
        "NDVI": [(0, 0.70), (150, 0.70)],
        "LSWI": [(0, 0.25), (150, 0.25)],
        "MNDWI": [(0, -0.40), (150, -0.40)],
    },
    "flat_low": {
        "NDVI": [(0, 0.15), (150, 0.15)],
        "LSWI": [(0, 0.00), (150, 0.00)],
        "MNDWI": [(0, -0.20), (150, -0.20)],
    },
    "wetland": {
        "NDVI": [(0, 0.20), (60, 0.50), (90, 0.75), (150, 0.78)],
        "LSWI": [(0, 0.45), (150, 0.45)],
        "MNDWI": [(0, 0.10), (150, -0.10)],
    },
}
CONFOUNDERS = ("flat_high", "flat_low", "wetland")

# Transition days of the rice profile: NDVI 0.30 up, 0.45 up, peak-0.10 down.
RICE_TRANSITIONS = (45, 70, 110)


def profile(kind: str, days: np.ndarray, shift: float = 0.0) -> dict[str, np.ndarray]:
    out = {}
    for idx, knots in PROFILES[kind].items():
        kd, kv = zip(*knots)
        out[idx] = np.interp(days - shift, kd, kv)
    return out


def bands_from_indices(ndvi, lswi, mndwi) -> dict[str, np.ndarray]:
    """Reflectances whose NDVI, LSWI and MNDWI equal the inputs (B2 tied to B4)."""
    b8 = 0.15 + 0.3 * ndvi
    b4 = b8 * (1 - ndvi) / (1 + ndvi)
    b11 = b8 * (1 - lswi) / (1 + lswi)
    b3 = b11 * (1 + mndwi) / (1 - mndwi)
    b2 = 0.8 * b4
    return {"B2": b2, "B3": b3, "B4": b4, "B8": b8, "B11": b11}


def season_dates(n_dates: int = 31, step: int = 5, start: dt.date = SEASON_START):
    return [start + dt.timedelta(days=step * i) for i in range(n_dates)]


def rice_windows(district: str, dates, shift: int = 0) -> StageWindows:
    """True stage windows of the rice profile, snapped to the sampled dates."""
    start = dates[0]
    one = dt.timedelta(days=1)
    sampled = np.array([(d - start).days for d in dates])
    t = [start + dt.timedelta(days=int(sampled[np.argmax(sampled >= day + shift)]))
         for day in RICE_TRANSITIONS]
    return StageWindows(district, {
        Stage.LandPreparation: (start, t[0] - one),
        Stage.Vegetative: (t[0], t[1] - one),
        Stage.Reproductive: (t[1], t[2] - one),
        Stage.Ripening: (t[2], dates[-1]),
    })


@dataclass
class SyntheticDistrict:
    cube: ReflectanceCube
    polygons: list
    truth: np.ndarray           # True on rice pixels
    kind: np.ndarray            # cover type per pixel
    field_id: np.ndarray        # field index per pixel, -1 = background
    windows: StageWindows
    meta: dict = field(default_factory=dict)


def render(kind_map: np.ndarray, field_map: np.ndarray, dates, rng, shift: float = 0.0,
           field_jitter: float = 3.0, noise: float = 0.012, cloud_rate: float = 0.03) -> np.ndarray:
    """Reflectance values (T, 5, H, W) for a cover-type map."""
    days = np.array([(d - dates[0]).days for d in dates], dtype=np.float64)
    h, w = kind_map.shape
    n_fields = int(field_map.max()) + 1
    jitter = rng.uniform(-field_jitter, field_jitter, size=max(n_fields, 1))
    idx = {k: np.zeros((len(dates), h, w)) for k in ("NDVI", "LSWI", "MNDWI")}
    for kind in np.unique(kind_map):
        sel = kind_map == kind
        fids = field_map[sel]
        for k in idx:
            # per-field phase jitter: evaluate trajectories per distinct jitter value
            vals = np.empty((len(dates), sel.sum()))
            for f in np.unique(fids):
                cols = fids == f
                j = jitter[f] if f >= 0 else 0.0
                vals[:, cols] = profile(kind, days, shift + j)[k][:, None]
            idx[k][:, sel] = vals
    for k in idx:
        idx[k] += rng.normal(0.0, noise, size=idx[k].shape)
        np.clip(idx[k], -0.95, 0.95, out=idx[k])
    bands = bands_from_indices(idx["NDVI"], idx["LSWI"], idx["MNDWI"])
    values = np.stack([bands[b] for b in ("B2", "B3", "B4", "B8", "B11")], axis=1).astype(np.float32)
    if cloud_rate > 0:
        cloudy = rng.random((len(dates), h, w)) < cloud_rate
        values[np.broadcast_to(cloudy[:, None], values.shape)] = np.nan
    return values


def make_district(name: str = "Nalgonda", n_rice: int = 500, n_confounders: int = 500,
                  block: int = 4, blocks_per_row: int = 50, seed: int = 0, shift_days: int = 0,
                  n_dates: int = 31, step: int = 5, pixel_size: float = 10.0, noise: float = 0.012,
                  cloud_rate: float = 0.03) -> SyntheticDistrict:
    """Rice fields in the upper part of the scene, confounders below.

    Each field is a ``block`` x ``block`` square; confounder types cycle
    flat-high, flat-low, wetland.
    """
    rng = np.random.default_rng(seed)
    n = n_rice + n_confounders
    n_rows = -(-n // blocks_per_row)
    h, w = n_rows * block, blocks_per_row * block
    kinds = ["rice"] * n_rice + [CONFOUNDERS[i % 3] for i in range(n_confounders)]
    kind_map = np.full((h, w), "flat_low", dtype=object)
    field_map = np.full((h, w), -1, dtype=np.int64)
    grid = GeoGrid(500000.0, 1900000.0, pixel_size, w, h, "EPSG:32644")
    polygons = []
    for f, kind in enumerate(kinds):
        r0, c0 = (f // blocks_per_row) * block, (f % blocks_per_row) * block
        kind_map[r0:r0 + block, c0:c0 + block] = kind
        field_map[r0:r0 + block, c0:c0 + block] = f
        px = tuple((r, c) for r in range(r0, r0 + block) for c in range(c0, c0 + block))
        polygons.append(ReferencePolygon(f"{name}-{f:04d}", name,
                                         "paddy" if kind == "rice" else "non_paddy",
                                         block * block * pixel_size ** 2 / 10_000.0, pixels=px))
    dates = season_dates(n_dates, step)
    values = render(kind_map, field_map, dates, rng, shift_days, noise=noise, cloud_rate=cloud_rate)
    cube = ReflectanceCube(grid=grid, dates=dates, bands=("B2", "B3", "B4", "B8", "B11"),
                           values=values, district=name)
    return SyntheticDistrict(cube, polygons, kind_map == "rice", kind_map.astype(str), field_map,
                             rice_windows(name, dates, shift_days),
                             {"seed": seed, "shift_days": shift_days, "n_rice": n_rice,
                              "n_confounders": n_confounders})


def make_field_size_landscape(sizes=(1, 2, 5), fields_per_size: int | None = None, seed: int = 0,
                              target_pixels: int = 400, pixel_size: float = 10.0,
                              cloud_rate: float = 0.0) -> SyntheticDistrict:
    """Square rice fields of side 1, 2 and 5 pixels (1, 4, 25 px) with matched total area.

    Each size gets one panel: rice fields on a non-rice matrix on the left
    half, the inverse pattern (non-rice fields on a rice matrix) on the
    right half. Fields are separated from each other and from the panel
    edges by at least four pixels.
    """
    rng = np.random.default_rng(seed)
    panels = []
    for s in sizes:
        n_fields = fields_per_size or max(1, target_pixels // (s * s))
        per_row = int(np.ceil(np.sqrt(n_fields)))
        gap = max(s, 4)
        cell = s + gap
        half = per_row * cell + gap
        panels.append((s, n_fields, per_row, cell, gap, half))
    height = sum(p[-1] for p in panels)
    width = 2 * max(p[-1] for p in panels)
    kind_map = np.full((height, width), "flat_low", dtype=object)
    field_map = np.full((height, width), -1, dtype=np.int64)
    size_map = np.zeros((height, width), dtype=np.int64)
    fid = 0
    r_off = 0
    for s, n_fields, per_row, cell, gap, half in panels:
        kind_map[r_off:r_off + half, half:2 * half] = "rice"
        for side, fg in ((0, "rice"), (half, "flat_low")):
            for i in range(n_fields):
                r0 = r_off + gap + (i // per_row) * cell
                c0 = side + gap + (i % per_row) * cell
                kind_map[r0:r0 + s, c0:c0 + s] = fg
                field_map[r0:r0 + s, c0:c0 + s] = fid
                size_map[r0:r0 + s, c0:c0 + s] = s * s
                fid += 1
        r_off += half
    grid = GeoGrid(0.0, 0.0 + height * pixel_size, pixel_size, width, height)
    dates = season_dates()
    values = render(kind_map, field_map, dates, rng, cloud_rate=cloud_rate)
    cube = ReflectanceCube(grid=grid, dates=dates, bands=("B2", "B3", "B4", "B8", "B11"),
                           values=values, district="Landscape")
    return SyntheticDistrict(cube, [], kind_map == "rice", kind_map.astype(str), field_map,
                             rice_windows("Landscape", dates), {"field_pixels": size_map})


def nalgonda_style_calibration(windows: StageWindows, district: str | None = None,
                               sigma: float = 0.15) -> DistrictCalibration:
    """Literature-range stage rules with TSP sigma 0.15 and TPA 0.60-0.90 / 0.15 / 0.15."""
    district = district or windows.district
    rules = {s: StageRule(s, "basic", LITERATURE_BOUNDS[s]) for s in STAGES}
    return DistrictCalibration(
        district=district,
        season=(windows[Stage.LandPreparation][0], windows[Stage.Ripening][1]),
        windows=windows,
        rules=rules,
        tsp=TspParams.uniform(sigma),
        tpa=TpaParams(0.60, 0.90, 0.15, 0.15),
        description="Literature stage ranges with Nalgonda-style temporal checks",
    )


def write_inputs(d: SyntheticDistrict, out_dir, scale: float = 10000.0, cloud_rate: float = 0.02,
                 cloudy_date: int | None = 3, cloudy_fraction: float = 0.85, seed: int = 0):
    """Write ``raw/`` (scaled DN cube), ``qa/`` and ``refs.geojson`` for the command-line tools.

    Cloud-flagged pixels get bright reflectance so that only QA masking removes them.
    Returns the three paths.
    """
    from pathlib import Path

    from .calibration import write_reference_polygons
    from .preprocess import QaBits
    from .raster import write_cube, write_stack

    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    cube = d.cube
    t, h, w = len(cube.dates), cube.grid.height, cube.grid.width
    cloudy = rng.random((t, h, w)) < cloud_rate
    if cloudy_date is not None:
        cloudy[cloudy_date] = rng.random((h, w)) < cloudy_fraction
        cloudy[cloudy_date].flat[: int(np.ceil(cloudy_fraction * h * w))] = True
        cloudy[cloudy_date].flat[int(np.ceil(cloudy_fraction * h * w)):] = False
    values = np.nan_to_num(cube.values, nan=0.9) * scale
    values[np.broadcast_to(cloudy[:, None], values.shape)] = 0.9 * scale
    write_cube(cube.replace(values=values.astype(np.float32)), out / "raw")
    qa = np.where(cloudy, float(1 << QaBits().cloud_bit), 0.0).astype(np.float32)[:, None]
    write_stack(out / "qa", cube.grid, cube.dates, ("QA",), qa, district=cube.district)
    write_reference_polygons(out / "refs.geojson", d.polygons)
    return out / "raw", out / "qa", out / "refs.geojson"
