"""Scene screening, QA cloud masking, reflectance scaling and IQR outlier removal."""
from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass, field

import numpy as np

from .indices import compute_index, usable_indices
from .raster import CubeFormatError, GeoGrid, ReflectanceCube, read_stack

CLOUD_BIT = 10
CIRRUS_BIT = 11
DEFAULT_SCALE = 10000.0


class EmptyCubeError(ValueError):
    pass


@dataclass
class QaStack:
    """One QA bitfield plane per cube date."""

    grid: GeoGrid
    dates: list[dt.date]
    values: np.ndarray  # (T, H, W) integer

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (len(self.dates), self.grid.height, self.grid.width):
            raise CubeFormatError(f"QA shape {self.values.shape} does not match grid/dates")

    def check_aligned(self, cube: ReflectanceCube):
        if self.grid.shape != cube.grid.shape:
            raise CubeFormatError(f"QA grid {self.grid.shape} != cube grid {cube.grid.shape}")
        if list(self.dates) != list(cube.dates):
            raise CubeFormatError("QA dates are not aligned with cube dates")

    def subset(self, keep) -> "QaStack":
        keep = np.asarray(keep, dtype=bool)
        return QaStack(self.grid, [d for d, k in zip(self.dates, keep) if k], self.values[keep])


def read_qa(path) -> QaStack:
    m, grid, dates, bands, values = read_stack(path, ("QA",))
    if bands != ("QA",):
        raise CubeFormatError(f"QA directory must hold exactly the QA band, got {bands}")
    v = values[:, 0]
    v = np.where(np.isnan(v), 0, v)
    return QaStack(grid, dates, v.astype(np.int64))


@dataclass(frozen=True)
class QaBits:
    cloud_bit: int = CLOUD_BIT
    cirrus_bit: int = CIRRUS_BIT

    def flagged(self, qa: np.ndarray) -> np.ndarray:
        qa = np.asarray(qa).astype(np.int64)
        flags = (1 << self.cloud_bit) | (1 << self.cirrus_bit)
        return (qa & flags) != 0


def cloud_fractions(cube: ReflectanceCube, qa: QaStack, bits: QaBits = QaBits()) -> np.ndarray:
    """Cloud-flagged share of each date's data footprint.

    The footprint is every pixel with data in at least one band; a date with
    an empty footprint counts as fully clouded.
    """
    qa.check_aligned(cube)
    footprint = ~cube.nodata_mask().all(axis=1)
    cloudy = bits.flagged(qa.values) & footprint
    n_valid = footprint.sum(axis=(1, 2))
    n_cloud = cloudy.sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(n_valid > 0, n_cloud / np.maximum(n_valid, 1), 1.0)
    return frac


def drop_cloudy_scenes(cube: ReflectanceCube, qa: QaStack, max_cloud_fraction: float = 0.8,
                       bits: QaBits = QaBits()):
    """Remove dates whose cloud fraction exceeds ``max_cloud_fraction``.

    Returns the reduced cube and the matching QA stack.
    """
    if not 0 < max_cloud_fraction <= 1:
        raise ValueError(f"max_cloud_fraction must be in (0, 1], got {max_cloud_fraction}")
    keep = cloud_fractions(cube, qa, bits) <= max_cloud_fraction
    if not keep.any():
        raise EmptyCubeError("every date exceeds the cloud threshold")
    if keep.all():
        return cube, qa
    return cube.select_dates(keep), qa.subset(keep)


def mask_cloud_pixels(cube: ReflectanceCube, qa: QaStack, bits: QaBits = QaBits()) -> ReflectanceCube:
    qa.check_aligned(cube)
    flagged = bits.flagged(qa.values)
    if not flagged.any():
        return cube
    values = cube.values.copy()
    values[np.broadcast_to(flagged[:, None], values.shape)] = cube.nodata
    return cube.replace(values=values)


def normalize_reflectance(cube: ReflectanceCube, scale: float = DEFAULT_SCALE) -> ReflectanceCube:
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    nd = cube.nodata_mask()
    scaled = np.clip(cube.values.astype(np.float64) / scale, 0.0, 1.0).astype(cube.values.dtype)
    scaled[nd] = cube.nodata
    return cube.replace(values=scaled)


def iqr_bounds(values: np.ndarray, k: float, axis=0):
    """Median and half-width ``k * IQR`` along ``axis``, ignoring NaN.

    Quantiles use linear interpolation between order statistics.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        q1, med, q3 = np.nanquantile(values, [0.25, 0.5, 0.75], axis=axis, method="linear")
    return med, k * (q3 - q1)


def iqr_outlier_mask(series: np.ndarray, k: float = 2.0, axis: int = 0):
    """Set observations outside ``median +/- k*IQR`` to NaN.

    Works on a single series or on a stack of series along ``axis``. Series
    with fewer than 4 valid observations are left alone, and so are series
    whose IQR is zero.

    Returns
    -------
    masked : ndarray
        Copy of ``series`` (float64) with outliers replaced by NaN.
    insufficient : bool or ndarray of bool
        True where a series had fewer than 4 valid observations.
    """
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    x = np.array(series, dtype=np.float64)
    valid = ~np.isnan(x)
    n_valid = valid.sum(axis=axis)
    insufficient = n_valid < 4
    if x.size == 0:
        return x, insufficient
    med, half = iqr_bounds(x, k, axis=axis)
    med = np.expand_dims(med, axis)
    half = np.expand_dims(half, axis)
    active = np.expand_dims(~insufficient, axis) & (half > 0)
    with np.errstate(invalid="ignore"):
        outlier = valid & active & ((x < med - half) | (x > med + half))
    x[outlier] = np.nan
    if np.ndim(insufficient) == 0:
        insufficient = bool(insufficient)
    return x, insufficient


@dataclass
class PreprocessReport:
    cloud_fraction: dict[str, float] = field(default_factory=dict)
    dropped_dates: list[str] = field(default_factory=list)
    cloud_pixels_masked: int = 0
    outliers_masked: int = 0
    short_series: int = 0


def remove_index_outliers(cube: ReflectanceCube, k: float = 2.0, indices=None):
    """Mask pixel-dates whose index value is an outlier in that pixel's time series.

    Any index flagging an observation sets all bands of that pixel-date to nodata.
    Returns ``(cube, n_masked, n_short_series)``.
    """
    kinds = indices or usable_indices(cube.bands)
    drop = np.zeros((len(cube.dates), cube.grid.height, cube.grid.width), dtype=bool)
    short = np.zeros(cube.grid.shape, dtype=bool)
    for kind in kinds:
        ic = compute_index(cube, kind)
        masked, insufficient = iqr_outlier_mask(ic.values, k, axis=0)
        drop |= np.isnan(masked) & ~np.isnan(ic.values)
        short |= insufficient
    if not drop.any():
        return cube, 0, int(short.sum())
    values = cube.values.copy()
    values[np.broadcast_to(drop[:, None], values.shape)] = cube.nodata
    return cube.replace(values=values), int(drop.sum()), int(short.sum())


def preprocess_cube(cube: ReflectanceCube, qa: QaStack, scale: float = DEFAULT_SCALE,
                    max_cloud_fraction: float = 0.8, outlier_k: float = 2.0,
                    bits: QaBits = QaBits()):
    """Scene drop, pixel masking, scaling, then per-pixel index outlier removal."""
    report = PreprocessReport()
    fractions = cloud_fractions(cube, qa, bits)
    report.cloud_fraction = {d.isoformat(): round(float(f), 6) for d, f in zip(cube.dates, fractions)}
    kept, qa_kept = drop_cloudy_scenes(cube, qa, max_cloud_fraction, bits)
    report.dropped_dates = [d.isoformat() for d in cube.dates if d not in set(kept.dates)]
    before = kept.nodata_mask().sum()
    masked = mask_cloud_pixels(kept, qa_kept, bits)
    report.cloud_pixels_masked = int(masked.nodata_mask().sum() - before) // max(len(kept.bands), 1)
    scaled = normalize_reflectance(masked, scale)
    cleaned, report.outliers_masked, report.short_series = remove_index_outliers(scaled, outlier_k)
    return cleaned, report
