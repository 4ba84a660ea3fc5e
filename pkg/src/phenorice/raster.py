"""Raster and time-series data model plus the cube directory format.

A cube directory holds ``manifest.json`` and one raw plane per (date, band),
named ``<date>_<band>.f32``: little-endian float32, row-major, no header.
"""
from __future__ import annotations

import datetime as dt
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

REFLECTANCE_BANDS = ("B2", "B3", "B4", "B8", "B11")
INDEX_NAMES = ("NDVI", "MNDWI", "LSWI", "EVI", "SAVI")
PLANE_DTYPE = np.dtype("<f4")

# Sentinel-2 native band resolutions (m); used when a manifest declares none.
S2_NATIVE_RESOLUTION = {"B2": 10.0, "B3": 10.0, "B4": 10.0, "B8": 10.0, "B11": 20.0}


class CubeFormatError(ValueError):
    """Raised when a cube directory or cube object violates the format contract."""


@dataclass(frozen=True)
class GeoGrid:
    origin_x: float
    origin_y: float
    pixel_size: float
    width: int
    height: int
    crs_label: str = ""

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise CubeFormatError(f"pixel_size must be > 0, got {self.pixel_size}")
        if self.width < 1 or self.height < 1:
            raise CubeFormatError(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def pixel_center(self, row, col):
        """Map coordinates of pixel centers; origin is the top-left corner, y grows north."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.pixel_size
        return x, y

    def sub_rows(self, start: int, stop: int) -> "GeoGrid":
        return GeoGrid(self.origin_x, self.origin_y - start * self.pixel_size,
                       self.pixel_size, self.width, stop - start, self.crs_label)


def is_nodata(values: np.ndarray, nodata: float) -> np.ndarray:
    if isinstance(nodata, float) and math.isnan(nodata):
        return np.isnan(values)
    return (values == nodata) | np.isnan(values)


def _check_dates(dates: Sequence[dt.date]):
    for a, b in zip(dates, dates[1:]):
        if not a < b:
            raise CubeFormatError(f"dates must be strictly increasing: {a} then {b}")


@dataclass
class ReflectanceCube:
    """Dates x bands x rows x cols reflectance stack for one district."""

    grid: GeoGrid
    dates: list[dt.date]
    bands: tuple[str, ...]
    values: np.ndarray
    nodata: float = float("nan")
    district: str = ""
    native_resolution: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.dates = list(self.dates)
        self.bands = tuple(self.bands)
        if not self.bands:
            raise CubeFormatError("cube needs at least one band")
        if not self.dates:
            raise CubeFormatError("cube needs at least one date")
        unknown = [b for b in self.bands if b not in REFLECTANCE_BANDS]
        if unknown:
            raise CubeFormatError(f"unknown band name(s): {unknown}")
        if len(set(self.bands)) != len(self.bands):
            raise CubeFormatError(f"duplicate bands: {self.bands}")
        _check_dates(self.dates)
        expected = (len(self.dates), len(self.bands), self.grid.height, self.grid.width)
        if self.values.shape != expected:
            raise CubeFormatError(f"values shape {self.values.shape} != {expected}")

    @property
    def shape(self):
        return self.values.shape

    def band_index(self, band: str) -> int:
        try:
            return self.bands.index(band)
        except ValueError:
            raise KeyError(f"band {band!r} not in cube (has {self.bands})") from None

    def band(self, band: str) -> np.ndarray:
        """All dates of one band, shape (T, H, W)."""
        return self.values[:, self.band_index(band)]

    def plane(self, date_idx: int, band: str) -> np.ndarray:
        if not 0 <= date_idx < len(self.dates):
            raise IndexError(f"date index {date_idx} out of range [0, {len(self.dates)})")
        return self.values[date_idx, self.band_index(band)]

    def value(self, date_idx: int, band: str, row: int, col: int) -> float:
        plane = self.plane(date_idx, band)
        if not (0 <= row < self.grid.height and 0 <= col < self.grid.width):
            raise IndexError(f"pixel ({row}, {col}) outside {self.grid.height}x{self.grid.width} grid")
        return float(plane[row, col])

    def nodata_mask(self) -> np.ndarray:
        return is_nodata(self.values, self.nodata)

    def replace(self, **changes) -> "ReflectanceCube":
        kw = dict(grid=self.grid, dates=self.dates, bands=self.bands, values=self.values,
                  nodata=self.nodata, district=self.district,
                  native_resolution=dict(self.native_resolution))
        kw.update(changes)
        return ReflectanceCube(**kw)

    def select_bands(self, bands: Iterable[str]) -> "ReflectanceCube":
        bands = tuple(bands)
        idx = [self.band_index(b) for b in bands]
        return self.replace(bands=bands, values=self.values[:, idx].copy())

    def select_dates(self, keep: np.ndarray) -> "ReflectanceCube":
        keep = np.asarray(keep, dtype=bool)
        dates = [d for d, k in zip(self.dates, keep) if k]
        return self.replace(dates=dates, values=self.values[keep].copy())

    def resolution_of(self, band: str) -> float:
        return float(self.native_resolution.get(band, self.grid.pixel_size))


@dataclass
class IndexCube:
    """Dates x rows x cols of one spectral index; NaN marks nodata."""

    grid: GeoGrid
    dates: list[dt.date]
    index: str
    values: np.ndarray
    district: str = ""

    nodata = float("nan")

    def __post_init__(self):
        if self.index not in INDEX_NAMES:
            raise CubeFormatError(f"unknown index {self.index!r}")
        _check_dates(self.dates)
        expected = (len(self.dates), self.grid.height, self.grid.width)
        if self.values.shape != expected:
            raise CubeFormatError(f"values shape {self.values.shape} != {expected}")


@dataclass
class BinaryMask:
    """Plane of 0/1 with NaN as nodata."""

    grid: GeoGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise CubeFormatError(f"mask shape {self.values.shape} != grid {self.grid.shape}")
        v = self.values[~np.isnan(self.values)]
        if v.size and not np.all((v == 0) | (v == 1)):
            raise CubeFormatError("mask values must be 0, 1 or NaN")

    @classmethod
    def from_bool(cls, grid: GeoGrid, positive: np.ndarray, nodata: np.ndarray | None = None):
        values = positive.astype(np.float32)
        if nodata is not None:
            values[nodata] = np.nan
        return cls(grid, values)

    @property
    def positive(self) -> np.ndarray:
        return self.values == 1

    @property
    def nodata(self) -> np.ndarray:
        return np.isnan(self.values)

    def count(self) -> int:
        return int(np.count_nonzero(self.values == 1))


# ---------------------------------------------------------------------------
# directory format
# ---------------------------------------------------------------------------

def _nodata_to_json(v: float):
    return "NaN" if math.isnan(v) else v


def _nodata_from_json(v) -> float:
    if v is None or v == "NaN":
        return float("nan")
    return float(v)


def plane_filename(date: dt.date, band: str) -> str:
    return f"{date.isoformat()}_{band}.f32"


def read_plane(path: str | os.PathLike, grid: GeoGrid) -> np.ndarray:
    """Load one raw float32 plane and check it matches ``grid``."""
    path = Path(path)
    if not path.is_file():
        raise CubeFormatError(f"missing plane file: {path}")
    data = np.fromfile(path, dtype=PLANE_DTYPE)
    if data.size != grid.width * grid.height:
        raise CubeFormatError(
            f"{path.name}: {data.size} values, manifest expects "
            f"{grid.height}x{grid.width}={grid.width * grid.height}")
    return data.reshape(grid.shape)


def write_plane(path: str | os.PathLike, plane: np.ndarray):
    np.ascontiguousarray(plane, dtype=PLANE_DTYPE).tofile(path)


def _read_manifest(path: Path) -> dict:
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise CubeFormatError(f"no manifest.json in {path}")
    with open(mpath, encoding="utf-8") as fh:
        return json.load(fh)


def _grid_from_manifest(m: dict) -> GeoGrid:
    try:
        return GeoGrid(float(m["origin_x"]), float(m["origin_y"]), float(m["pixel_size"]),
                       int(m["width"]), int(m["height"]), str(m.get("crs_label", "")))
    except KeyError as exc:
        raise CubeFormatError(f"manifest missing field {exc}") from None


def read_stack(path: str | os.PathLike, allowed_bands: Sequence[str] | None = None):
    """Read any cube-format directory.

    Returns ``(manifest, grid, dates, bands, values)`` with values shaped
    (dates, bands, rows, cols) as stored (float32).
    """
    path = Path(path)
    m = _read_manifest(path)
    grid = _grid_from_manifest(m)
    try:
        dates = [dt.date.fromisoformat(d) for d in m["dates"]]
        bands = tuple(m["bands"])
    except KeyError as exc:
        raise CubeFormatError(f"manifest missing field {exc}") from None
    _check_dates(dates)
    if allowed_bands is not None:
        unknown = [b for b in bands if b not in allowed_bands]
        if unknown:
            raise CubeFormatError(f"unknown band name(s): {unknown}")
    values = np.empty((len(dates), len(bands), grid.height, grid.width), dtype=PLANE_DTYPE)
    for t, d in enumerate(dates):
        for b, name in enumerate(bands):
            values[t, b] = read_plane(path / plane_filename(d, name), grid)
    return m, grid, dates, bands, values


def write_stack(path: str | os.PathLike, grid: GeoGrid, dates, bands, values,
                nodata: float = float("nan"), district: str = "", extra: dict | None = None):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CubeFormatError(f"cannot create {path}: {exc}") from exc
    manifest = {
        "district": district,
        "crs_label": grid.crs_label,
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "pixel_size": grid.pixel_size,
        "width": grid.width,
        "height": grid.height,
        "nodata": _nodata_to_json(nodata),
        "bands": list(bands),
        "dates": [d.isoformat() for d in dates],
    }
    if extra:
        manifest.update(extra)
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for t, d in enumerate(dates):
        for b, name in enumerate(bands):
            write_plane(path / plane_filename(d, name), values[t, b])


def read_cube(path: str | os.PathLike) -> ReflectanceCube:
    m, grid, dates, bands, values = read_stack(path, REFLECTANCE_BANDS)
    return ReflectanceCube(grid=grid, dates=dates, bands=bands, values=values,
                           nodata=_nodata_from_json(m.get("nodata")),
                           district=m.get("district", ""),
                           native_resolution={k: float(v) for k, v in
                                              m.get("native_resolution", {}).items()})


def write_cube(cube: ReflectanceCube, path: str | os.PathLike):
    if not cube.bands:
        raise CubeFormatError("cannot write a cube without bands")
    extra = {"native_resolution": cube.native_resolution} if cube.native_resolution else None
    write_stack(path, cube.grid, cube.dates, cube.bands, cube.values,
                nodata=cube.nodata, district=cube.district, extra=extra)


def write_index_cubes(cubes: Sequence[IndexCube], path: str | os.PathLike):
    """Write several index cubes sharing one grid as one directory (band = index name)."""
    first = cubes[0]
    values = np.stack([c.values for c in cubes], axis=1)
    write_stack(path, first.grid, first.dates, [c.index for c in cubes], values,
                district=first.district)


def read_index_cubes(path: str | os.PathLike) -> dict[str, IndexCube]:
    m, grid, dates, bands, values = read_stack(path, INDEX_NAMES)
    return {b: IndexCube(grid, dates, b, values[:, i].astype(np.float64), m.get("district", ""))
            for i, b in enumerate(bands)}


def write_masks(path: str | os.PathLike, masks: dict[str, BinaryMask], date: dt.date,
                district: str = ""):
    """Write named masks as a single-date cube directory, one band per mask."""
    names = list(masks)
    grid = masks[names[0]].grid
    values = np.stack([masks[n].values for n in names])[None]
    write_stack(path, grid, [date], names, values, district=district)


def read_masks(path: str | os.PathLike) -> tuple[str, dict[str, BinaryMask]]:
    m, grid, dates, bands, values = read_stack(path)
    return m.get("district", ""), {b: BinaryMask(grid, values[0, i].copy())
                                   for i, b in enumerate(bands)}


def write_pgm(mask: BinaryMask, path: str | os.PathLike):
    """Grayscale dump for eyeballing: 255 paddy, 0 non-paddy, 128 nodata."""
    img = np.where(mask.nodata, 128, np.where(mask.positive, 255, 0)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.grid.width} {mask.grid.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
