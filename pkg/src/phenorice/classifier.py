"""Stage rules, temporal checks, stage combination, exclusions and spatial refinement."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from .config import DistrictCalibration, StageRule, TpaParams
from .indices import IndexKind, compute_index
from .parallel import run_blocks, worker_count
from .phenology import (AREA_STAGES, STAGES, EmptyWindowError, Stage, StageComposite,
                        composite_values, window_date_mask)
from .preprocess import iqr_outlier_mask
from .raster import BinaryMask, GeoGrid, ReflectanceCube

log = logging.getLogger("phenorice.classify")


class GridMismatchError(ValueError):
    pass


class MissingCompositeError(KeyError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, step: str, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"[{step}] {cause}")


def _plane(x):
    if isinstance(x, StageComposite):
        return x.mean
    if isinstance(x, BinaryMask):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _check_grid(*masks: BinaryMask):
    shapes = {m.grid.shape for m in masks}
    if len(shapes) > 1:
        raise GridMismatchError(f"masks on different grids: {sorted(shapes)}")


def _check_shape(mask: BinaryMask, plane: np.ndarray, what: str):
    if np.shape(plane) != mask.grid.shape:
        raise GridMismatchError(f"{what} shape {np.shape(plane)} != mask grid {mask.grid.shape}")


# ---------------------------------------------------------------------------
# stage rules
# ---------------------------------------------------------------------------

def evaluate_rule(composites: Mapping, rule: StageRule) -> np.ndarray:
    """Rule outcome as float array: 1 paddy, 0 not, NaN where a used composite is nodata.

    ``composites`` maps index name (or IndexKind) to a StageComposite or plain array.
    """
    planes = {}
    for k in rule.indices_used():
        src = composites.get(k, composites.get(k.value))
        if src is None:
            raise MissingCompositeError(f"{rule.stage.value} rule needs a {k.value} composite")
        planes[k] = _plane(src)
    shape = np.shape(next(iter(planes.values()))) if planes else ()
    ok = np.ones(shape, dtype=bool)
    nodata = np.zeros(shape, dtype=bool)
    for p in planes.values():
        nodata |= np.isnan(p)
    for b in rule.bounds:
        ok &= b.evaluate(planes[b.index])
    for r in rule.ratios:
        ok &= r.evaluate(planes)
    if rule.method == "lswi_evi":
        with np.errstate(invalid="ignore"):
            ok &= planes[IndexKind.LSWI] >= planes[IndexKind.EVI] - rule.lswi_evi_offset
    out = ok.astype(np.float32)
    out[nodata] = np.nan
    return out


def apply_stage_rule(composites: Mapping, rule: StageRule, grid: GeoGrid) -> BinaryMask:
    return BinaryMask(grid, evaluate_rule(composites, rule))


# ---------------------------------------------------------------------------
# temporal checks
# ---------------------------------------------------------------------------

def temporal_std(series: np.ndarray):
    """Population standard deviation over valid values along axis 0, with valid counts."""
    series = np.asarray(series, dtype=np.float64)
    mean, count = composite_values(series)
    ss = np.zeros(series.shape[1:], dtype=np.float64)
    for plane in series:
        ok = ~np.isnan(plane)
        ss += np.where(ok, (plane - np.where(ok, mean, 0.0)) ** 2, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        std = np.where(count > 0, np.sqrt(ss / np.maximum(count, 1)), np.nan)
    return std, count


def tsp_filter(series, sigma_max: float):
    """Stability test on the NDVI observations inside one stage window.

    Returns ``(passed, insufficient)``. Pixels with fewer than two valid
    observations pass and are flagged as insufficient.
    """
    std, count = temporal_std(series)
    insufficient = count < 2
    with np.errstate(invalid="ignore"):
        passed = insufficient | (std <= sigma_max)
    return passed, insufficient


def tpa_filter(early, peak, late, params: TpaParams) -> np.ndarray:
    early, peak, late = (np.asarray(x, dtype=np.float64) for x in (early, peak, late))
    with np.errstate(invalid="ignore"):
        ok = ((peak >= params.peak_min) & (peak <= params.peak_max)
              & (peak - early >= params.min_increase)
              & (peak - late >= params.min_decrease))
    return ok & ~(np.isnan(early) | np.isnan(peak) | np.isnan(late))


# ---------------------------------------------------------------------------
# combination, exclusions, focal mode
# ---------------------------------------------------------------------------

def combine_stages(stage_masks: Mapping, policy: str = "majority") -> BinaryMask:
    """Merge Land Preparation, Vegetative and Reproductive masks into one.

    A Ripening mask, if present, is ignored. Nodata votes count as non-paddy;
    the result is nodata only where all three stages are nodata.
    """
    masks = {Stage(k): v for k, v in stage_masks.items()}
    missing = [s.value for s in AREA_STAGES if s not in masks]
    if missing:
        raise KeyError(f"combine_stages needs masks for {missing}")
    used = [masks[s] for s in AREA_STAGES]
    _check_grid(*used)
    votes = sum((m.values == 1).astype(np.int8) for m in used)
    all_nodata = np.logical_and.reduce([m.nodata for m in used])
    if policy == "majority":
        positive = votes >= 2
    elif policy == "all":
        positive = votes == len(used)
    elif policy == "any":
        positive = votes >= 1
    else:
        raise ValueError(f"unknown combine policy {policy!r}")
    return BinaryMask.from_bool(used[0].grid, positive, all_nodata)


def exclude_landcover(mask: BinaryMask, landcover: np.ndarray, excluded_classes) -> BinaryMask:
    _check_shape(mask, landcover, "land-cover plane")
    classes = np.asarray(sorted(excluded_classes), dtype=np.float64)
    hit = np.isin(landcover, classes) & ~np.isnan(landcover)
    values = mask.values.copy()
    values[hit & (values == 1)] = 0
    return BinaryMask(mask.grid, values)


def exclude_water(mask: BinaryMask, permanent=None, seasonal=None, exclude_seasonal: bool = True) -> BinaryMask:
    values = mask.values.copy()
    for plane, active in ((permanent, True), (seasonal, exclude_seasonal)):
        if plane is None or not active:
            continue
        plane = _plane(plane)
        _check_shape(mask, plane, "water plane")
        values[(plane == 1) & (values == 1)] = 0
    return BinaryMask(mask.grid, values)


def disc_kernel(radius_m: float, pixel_size: float) -> np.ndarray:
    """Pixels whose centre lies within ``radius_m`` of the centre pixel's centre."""
    r = int(math.floor(radius_m / pixel_size + 1e-9))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return ((yy ** 2 + xx ** 2) * pixel_size ** 2 <= radius_m ** 2 * (1 + 1e-12)).astype(np.float64)


def _focal_block(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    ones = ndimage.correlate((values == 1).astype(np.float64), kernel, mode="constant", cval=0.0)
    zeros = ndimage.correlate((values == 0).astype(np.float64), kernel, mode="constant", cval=0.0)
    out = values.copy()
    out[ones > zeros] = 1
    out[zeros > ones] = 0
    out[np.isnan(values)] = np.nan
    return out


def focal_mode(mask: BinaryMask, radius_m: float = 20.0, threads: int | None = None,
               n_blocks: int | None = None) -> BinaryMask:
    """Circular majority filter. Ties keep the original value; nodata does not vote."""
    if radius_m < mask.grid.pixel_size:
        raise ValueError(f"radius {radius_m} m is smaller than the pixel size {mask.grid.pixel_size} m")
    kernel = disc_kernel(radius_m, mask.grid.pixel_size)
    halo = kernel.shape[0] // 2
    h = mask.grid.height

    def block(a, b):
        lo, hi = max(0, a - halo), min(h, b + halo)
        return _focal_block(mask.values[lo:hi], kernel)[a - lo:a - lo + (b - a)]

    parts = run_blocks(block, h, threads, n_blocks)
    return BinaryMask(mask.grid, np.concatenate(parts, axis=0).astype(np.float32))


# ---------------------------------------------------------------------------
# district pipeline
# ---------------------------------------------------------------------------

@dataclass
class ExclusionInputs:
    landcover: np.ndarray | None = None
    water_permanent: np.ndarray | None = None
    water_seasonal: np.ndarray | None = None


@dataclass
class ClassificationResult:
    district: str
    grid: GeoGrid
    stage_masks: dict            # raw rule outcome per stage
    gated_masks: dict            # after TSP and TPA
    tpa_pass: BinaryMask | None
    combined: BinaryMask
    excluded: BinaryMask
    final: BinaryMask
    composites: dict = field(repr=False, default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def audit_masks(self) -> dict:
        out = {f"rule_{s.value}": m for s, m in self.stage_masks.items()}
        out.update({f"gated_{s.value}": m for s, m in self.gated_masks.items()})
        if self.tpa_pass is not None:
            out["tpa_pass"] = self.tpa_pass
        out.update(combined=self.combined, excluded=self.excluded, final=self.final)
        return out


def _required(cal: DistrictCalibration):
    """(stage, index) composites and the stages needing NDVI stability checks."""
    need = set()
    for s, rule in cal.rules.items():
        for k in rule.indices_used():
            need.add((s, k))
    if cal.tpa is not None:
        for s in (Stage.LandPreparation, Stage.Reproductive, Stage.Ripening):
            need.add((s, IndexKind.NDVI))
    tsp_stages = [s for s in STAGES if s in cal.rules and s in cal.tsp.sigma_max]
    return sorted(need, key=lambda p: (p[0].order, list(IndexKind).index(p[1]))), tsp_stages


def _area_ha(mask: BinaryMask) -> float:
    return mask.count() * mask.grid.pixel_size ** 2 / 10_000.0


def _gate(mask_values: np.ndarray, passed: np.ndarray) -> np.ndarray:
    out = mask_values.copy()
    out[(out == 1) & ~passed] = 0
    return out


def classify_district(cube: ReflectanceCube, cal: DistrictCalibration,
                      exclusions: ExclusionInputs | None = None,
                      threads: int | None = None, n_blocks: int | None = None) -> ClassificationResult:
    """Run the full per-district pipeline and keep every intermediate mask."""
    threads = threads or worker_count()
    grid = cube.grid
    need, tsp_stages = _required(cal)
    diag: dict = {"district": cal.district, "stage_windows": cal.windows.to_dict(),
                  "combine_policy": cal.combine_policy, "tpa_enabled": cal.tpa is not None}

    # per-stage date selections; an empty window aborts
    stages_needed = sorted({s for s, _ in need} | set(tsp_stages), key=lambda s: s.order)
    selections = {}
    for s in stages_needed:
        sel = window_date_mask(cube.dates, cal.windows, s)
        if not sel.any():
            raise PipelineError("composites", EmptyWindowError(s, *cal.windows[s]))
        selections[s] = sel
    diag["dates_per_stage"] = {s.value: int(selections[s].sum()) for s in stages_needed}
    indices_needed = sorted({k for _, k in need} | ({IndexKind.NDVI} if tsp_stages else set()),
                            key=list(IndexKind).index)

    means = {p: np.empty(grid.shape) for p in need}
    counts = {p: np.empty(grid.shape, dtype=np.int32) for p in need}
    tsp_pass = {s: np.empty(grid.shape, dtype=bool) for s in tsp_stages}
    tsp_short = {s: np.empty(grid.shape, dtype=bool) for s in tsp_stages}

    def pixel_block(a, b):
        sub = cube.replace(grid=grid.sub_rows(a, b), values=cube.values[:, :, a:b])
        idx = {k: compute_index(sub, k).values for k in indices_needed}
        for (s, k) in need:
            means[(s, k)][a:b], counts[(s, k)][a:b] = composite_values(idx[k][selections[s]])
        for s in tsp_stages:
            tsp_pass[s][a:b], tsp_short[s][a:b] = tsp_filter(idx[IndexKind.NDVI][selections[s]],
                                                             cal.tsp.sigma_max[s])

    try:
        run_blocks(pixel_block, grid.height, threads, n_blocks)
    except Exception as exc:
        raise PipelineError("indices/composites", exc) from exc

    # composite-level outlier filtering over the whole district plane
    composites = {}
    iqr_counts = {}
    for (s, k) in need:
        comp = StageComposite(cal.district, s, k.value, means[(s, k)], counts[(s, k)])
        mult = cal.outlier_multipliers.get(k.value)
        if mult:
            filtered, _ = iqr_outlier_mask(comp.mean.ravel(), mult)
            drop = np.isnan(filtered.reshape(grid.shape)) & ~np.isnan(comp.mean)
            iqr_counts[f"{s.value}/{k.value}"] = int(drop.sum())
            comp = comp.with_mask(drop)
        composites[(s, k)] = comp
    diag["composite_outliers_masked"] = iqr_counts

    try:
        stage_masks = {}
        for s in STAGES:
            if s in cal.rules:
                comps = {k: composites[(s, k)] for k in cal.rules[s].indices_used()}
                stage_masks[s] = apply_stage_rule(comps, cal.rules[s], grid)
    except Exception as exc:
        raise PipelineError("stage rules", exc) from exc

    gated = {}
    diag["tsp_failed"] = {}
    diag["tsp_insufficient"] = {}
    for s, m in stage_masks.items():
        v = m.values
        if s in tsp_pass:
            before = int((v == 1).sum())
            v = _gate(v, tsp_pass[s])
            diag["tsp_failed"][s.value] = before - int((v == 1).sum())
            diag["tsp_insufficient"][s.value] = int(tsp_short[s].sum())
        gated[s] = v

    tpa_mask = None
    if cal.tpa is not None:
        ok = tpa_filter(composites[(Stage.LandPreparation, IndexKind.NDVI)].mean,
                        composites[(Stage.Reproductive, IndexKind.NDVI)].mean,
                        composites[(Stage.Ripening, IndexKind.NDVI)].mean, cal.tpa)
        tpa_mask = BinaryMask.from_bool(grid, ok)
        diag["tpa_failed_pixels"] = int((~ok).sum())
        for s in AREA_STAGES:
            gated[s] = _gate(gated[s], ok)
    gated = {s: BinaryMask(grid, v) for s, v in gated.items()}

    combined = combine_stages({s: gated[s] for s in AREA_STAGES}, cal.combine_policy)

    excluded = combined
    skipped = []
    ex = exclusions or ExclusionInputs()
    pol = cal.exclusions
    if ex.water_permanent is not None and pol.water_permanent:
        excluded = exclude_water(excluded, permanent=ex.water_permanent)
    elif pol.water_permanent:
        skipped.append("water_permanent")
    if ex.water_seasonal is not None and pol.water_seasonal:
        excluded = exclude_water(excluded, seasonal=ex.water_seasonal, exclude_seasonal=True)
    elif pol.water_seasonal:
        skipped.append("water_seasonal")
    if ex.landcover is not None and pol.landcover_classes:
        excluded = exclude_landcover(excluded, ex.landcover, pol.landcover_classes)
    elif pol.landcover_classes:
        skipped.append("landcover")
    for name in skipped:
        log.info("exclusion input %s not supplied; step skipped", name)
    diag["exclusions_skipped"] = skipped

    final = focal_mode(excluded, cal.focal_radius_m, threads, n_blocks)

    diag["positive_pixels"] = {**{f"rule_{s.value}": stage_masks[s].count() for s in stage_masks},
                               **{f"gated_{s.value}": gated[s].count() for s in gated},
                               "combined": combined.count(), "excluded": excluded.count(),
                               "final": final.count()}
    diag["area_ha"] = {"combined": _area_ha(combined), "excluded": _area_ha(excluded),
                       "final": _area_ha(final)}
    if Stage.Ripening in stage_masks:
        diag["area_ha"]["ripening_rule_not_counted"] = _area_ha(stage_masks[Stage.Ripening])

    return ClassificationResult(cal.district, grid, stage_masks, gated, tpa_mask, combined,
                                excluded, final, composites, diag)
