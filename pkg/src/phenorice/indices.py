"""The five spectral indices used for paddy detection."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .raster import IndexCube, ReflectanceCube, is_nodata

DENOMINATOR_EPS = 1e-9


class IndexKind(str, Enum):
    NDVI = "NDVI"
    MNDWI = "MNDWI"
    LSWI = "LSWI"
    EVI = "EVI"
    SAVI = "SAVI"

    def __str__(self):
        return self.value


REQUIRED_BANDS = {
    IndexKind.NDVI: ("B8", "B4"),
    IndexKind.MNDWI: ("B3", "B11"),
    IndexKind.LSWI: ("B8", "B11"),
    IndexKind.EVI: ("B8", "B4", "B2"),
    IndexKind.SAVI: ("B8", "B4"),
}


def _num_den(kind: IndexKind, b: dict[str, np.ndarray]):
    if kind is IndexKind.NDVI:
        return b["B8"] - b["B4"], b["B8"] + b["B4"], 1.0
    if kind is IndexKind.MNDWI:
        return b["B3"] - b["B11"], b["B3"] + b["B11"], 1.0
    if kind is IndexKind.LSWI:
        return b["B8"] - b["B11"], b["B8"] + b["B11"], 1.0
    if kind is IndexKind.EVI:
        return b["B8"] - b["B4"], b["B8"] + 6.0 * b["B4"] - 7.5 * b["B2"] + 1.0, 2.5
    if kind is IndexKind.SAVI:
        return b["B8"] - b["B4"], b["B8"] + b["B4"] + 0.5, 1.5
    raise ValueError(kind)


def index_from_bands(kind, bands: dict[str, np.ndarray]) -> np.ndarray:
    """Evaluate one index on float band arrays (NaN = nodata)."""
    kind = IndexKind(kind)
    arrs = {k: np.asarray(bands[k], dtype=np.float64) for k in REQUIRED_BANDS[kind]}
    num, den, gain = _num_den(kind, arrs)
    bad = np.abs(den) < DENOMINATOR_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gain * (num / np.where(bad, 1.0, den))
    return np.where(bad | np.isnan(num) | np.isnan(den), np.nan, out)


def usable_indices(bands) -> list[IndexKind]:
    return [k for k in IndexKind if all(b in bands for b in REQUIRED_BANDS[k])]


def compute_index(cube: ReflectanceCube, kind) -> IndexCube:
    kind = IndexKind(kind)
    missing = [b for b in REQUIRED_BANDS[kind] if b not in cube.bands]
    if missing:
        raise KeyError(f"{kind.value} needs band(s) {missing}, cube has {cube.bands}")
    arrs = {}
    for b in REQUIRED_BANDS[kind]:
        v = cube.band(b).astype(np.float64)
        v[is_nodata(cube.band(b), cube.nodata)] = np.nan
        arrs[b] = v
    return IndexCube(cube.grid, list(cube.dates), kind.value, index_from_bands(kind, arrs),
                     cube.district)


def compute_indices(cube: ReflectanceCube, kinds=None) -> dict[IndexKind, IndexCube]:
    kinds = [IndexKind(k) for k in kinds] if kinds else usable_indices(cube.bands)
    return {k: compute_index(cube, k) for k in kinds}


@dataclass(frozen=True)
class EffectiveResolution:
    index: IndexKind
    resolution_m: float
    band_resolutions: dict

    @property
    def limiting_band(self) -> str:
        return max(self.band_resolutions, key=self.band_resolutions.get)


def align_to_coarsest(cube: ReflectanceCube, kind) -> EffectiveResolution:
    """Computation resolution of an index: the coarsest native resolution of its bands.

    Bookkeeping only; pixel data are assumed to be on one grid already.
    """
    kind = IndexKind(kind)
    res = {b: cube.resolution_of(b) for b in REQUIRED_BANDS[kind]}
    return EffectiveResolution(kind, max(res.values()), res)
