"""Per-district threshold derivation from reference fields, and the district vs cluster comparison."""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import shapely
from shapely.geometry import shape

from .classifier import evaluate_rule, temporal_std, tpa_filter
from .config import (CalibrationError, DistrictCalibration, RangeBound, RatioCriterion,
                     StageRule, TpaParams, TspParams)
from .indices import IndexKind
from .phenology import (AREA_STAGES, STAGES, Stage, StageWindows, composite_values,
                        detect_stage_transitions, smooth_savgol, window_date_mask)
from .raster import GeoGrid, IndexCube

log = logging.getLogger("phenorice.calibrate")

CLASSES = ("paddy", "non_paddy")
MIN_SAMPLES = 10
TSP_CLIP = (0.05, 0.25)
LEDGER_COLUMNS = ("district", "stage", "index", "range", "method",
                  "sensitivity", "specificity", "balance", "selected")


class InsufficientSamplesError(CalibrationError):
    pass


class SingleClassError(CalibrationError):
    pass


# ---------------------------------------------------------------------------
# reference polygons
# ---------------------------------------------------------------------------

@dataclass
class ReferencePolygon:
    polygon_id: str
    district: str
    cls: str
    area_ha: float
    geometry: object = None          # shapely geometry in map coordinates
    pixels: tuple | None = None      # explicit (row, col) membership

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise CalibrationError(f"polygon {self.polygon_id}: class {self.cls!r} not in {CLASSES}")
        if not self.area_ha > 0:
            raise CalibrationError(f"polygon {self.polygon_id}: area_ha must be > 0")
        if self.geometry is None and not self.pixels:
            raise CalibrationError(f"polygon {self.polygon_id}: needs a geometry or a pixel list")

    @property
    def is_paddy(self) -> bool:
        return self.cls == "paddy"

    def resolve_pixels(self, grid: GeoGrid) -> np.ndarray:
        """(n, 2) array of (row, col) pixels whose centres fall inside the polygon."""
        if self.pixels:
            px = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
            inside = ((px[:, 0] >= 0) & (px[:, 0] < grid.height)
                      & (px[:, 1] >= 0) & (px[:, 1] < grid.width))
            px = px[inside]
        else:
            minx, miny, maxx, maxy = self.geometry.bounds
            ps = grid.pixel_size
            c0 = max(0, int(np.floor((minx - grid.origin_x) / ps)))
            c1 = min(grid.width, int(np.ceil((maxx - grid.origin_x) / ps)) + 1)
            r0 = max(0, int(np.floor((grid.origin_y - maxy) / ps)))
            r1 = min(grid.height, int(np.ceil((grid.origin_y - miny) / ps)) + 1)
            if r0 >= r1 or c0 >= c1:
                px = np.empty((0, 2), dtype=np.int64)
            else:
                rr, cc = np.mgrid[r0:r1, c0:c1]
                x, y = grid.pixel_center(rr.ravel(), cc.ravel())
                hit = shapely.contains_xy(self.geometry, x, y)
                px = np.column_stack([rr.ravel()[hit], cc.ravel()[hit]])
        if len(px) == 0:
            raise CalibrationError(f"polygon {self.polygon_id} covers no pixel centre")
        return px


def read_reference_polygons(path, normalize=None) -> list[ReferencePolygon]:
    """GeoJSON FeatureCollection with properties {class, district, area_ha}.

    A feature may carry ``properties.pixels`` ([[row, col], ...]) instead of,
    or in addition to, a geometry; the explicit list wins.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise CalibrationError(f"{path}: not a GeoJSON FeatureCollection")
    out = []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        try:
            district = props["district"]
            cls = props["class"]
            area = float(props["area_ha"])
        except KeyError as exc:
            raise CalibrationError(f"{path}: feature {i} lacks property {exc}") from None
        if normalize is not None:
            district = normalize(district)
        geom = shape(feat["geometry"]) if feat.get("geometry") else None
        pixels = tuple(tuple(p) for p in props["pixels"]) if props.get("pixels") else None
        pid = str(feat.get("id", props.get("id", i)))
        out.append(ReferencePolygon(pid, district, cls, area, geom, pixels))
    return out


def write_reference_polygons(path, polygons: Sequence[ReferencePolygon]):
    feats = []
    for p in polygons:
        props = {"class": p.cls, "district": p.district, "area_ha": p.area_ha}
        if p.pixels:
            props["pixels"] = [list(map(int, px)) for px in p.pixels]
        feats.append({"type": "Feature", "id": p.polygon_id,
                      "geometry": shapely.geometry.mapping(p.geometry) if p.geometry is not None else None,
                      "properties": props})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# reference samples: per-pixel stage composites on reference fields
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSamples:
    district: str
    labels: np.ndarray                   # True = paddy, one entry per reference pixel
    polygon_ids: list
    composites: dict                     # (Stage, IndexKind) -> (n,)
    ndvi_std: dict                       # Stage -> (n,)
    windows: StageWindows | None = None

    def __len__(self):
        return len(self.labels)

    def planes(self, stage) -> dict:
        stage = Stage(stage)
        return {k: v for (s, k), v in self.composites.items() if s is stage}

    @staticmethod
    def pool(samples: Sequence["ReferenceSamples"], district: str = "") -> "ReferenceSamples":
        keys = set(samples[0].composites)
        for s in samples[1:]:
            keys &= set(s.composites)
        return ReferenceSamples(
            district,
            np.concatenate([s.labels for s in samples]),
            [pid for s in samples for pid in s.polygon_ids],
            {k: np.concatenate([s.composites[k] for s in samples]) for k in sorted(keys, key=str)},
            {st: np.concatenate([s.ndvi_std[st] for s in samples]) for st in samples[0].ndvi_std},
        )


def reference_samples(polygons: Sequence[ReferencePolygon], index_cubes: Mapping,
                      windows: StageWindows, district: str | None = None) -> ReferenceSamples:
    """Stage composites of every index at the reference pixels of one district."""
    cubes = {IndexKind(k): v for k, v in index_cubes.items()}
    first = next(iter(cubes.values()))
    district = district if district is not None else first.district
    polys = [p for p in polygons if not district or p.district == district]
    if not polys:
        raise CalibrationError(f"no reference polygons for district {district!r}")
    rows, cols, labels, pids = [], [], [], []
    for p in polys:
        px = p.resolve_pixels(first.grid)
        rows.append(px[:, 0])
        cols.append(px[:, 1])
        labels.append(np.full(len(px), p.is_paddy))
        pids.extend([p.polygon_id] * len(px))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    labels = np.concatenate(labels)
    comps, stds = {}, {}
    for s in STAGES:
        sel = window_date_mask(first.dates, windows, s)
        for k, cube in cubes.items():
            series = cube.values[sel][:, rows, cols]
            comps[(s, k)] = composite_values(series)[0] if sel.any() else np.full(len(rows), np.nan)
        if IndexKind.NDVI in cubes and sel.any():
            stds[s] = temporal_std(cubes[IndexKind.NDVI].values[sel][:, rows, cols])[0]
    return ReferenceSamples(district, labels, pids, comps, stds, windows)


def field_trajectories(polygons: Sequence[ReferencePolygon], ndvi: IndexCube, cls: str = "paddy"):
    """Mean NDVI trajectory (fields x dates) over the pixels of each reference field."""
    ids, traj = [], []
    for p in polygons:
        if p.cls != cls:
            continue
        px = p.resolve_pixels(ndvi.grid)
        series = ndvi.values[:, px[:, 0], px[:, 1]].T     # pixels x dates
        mean, _ = composite_values(series)
        traj.append(mean)
        ids.append(p.polygon_id)
    return ids, np.array(traj)


def windows_from_references(polygons, ndvi: IndexCube, district: str, season=None,
                            diagnostics=None) -> StageWindows:
    """Stage windows from the smoothed NDVI trajectories of the paddy reference fields."""
    ids, traj = field_trajectories(polygons, ndvi)
    if len(ids) < 2:
        raise CalibrationError(f"{district}: need at least 2 paddy reference fields to find stage windows")
    t = np.array([d.toordinal() for d in ndvi.dates], dtype=np.float64)
    smooth = np.array([smooth_savgol(row, t=t) for row in traj])
    return detect_stage_transitions(ndvi.dates, smooth, season=season or (ndvi.dates[0], ndvi.dates[-1]),
                                    district=district, field_ids=ids, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# candidate thresholds and scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PercentileRange:
    label: str
    low: float
    high: float

    def __post_init__(self):
        if self.label not in ("broad", "interquartile", "custom"):
            raise CalibrationError(f"unknown range label {self.label!r}")
        if not 0 <= self.low < self.high <= 100:
            raise CalibrationError(f"need 0 <= low < high <= 100, got {self.low}, {self.high}")


BROAD = PercentileRange("broad", 10, 90)
INTERQUARTILE = PercentileRange("interquartile", 25, 75)

# Literature ranges used as the "custom" candidate per stage.
LITERATURE_BOUNDS = {
    Stage.LandPreparation: (RangeBound("NDVI", 0.15, 0.30), RangeBound("LSWI", 0.10, 0.45),
                            RangeBound("MNDWI", 0.0, None, min_exclusive=True)),
    Stage.Vegetative: (RangeBound("NDVI", 0.25, 0.70), RangeBound("EVI", 0.15, None),
                       RangeBound("LSWI", 0.20, 0.50)),
    Stage.Reproductive: (RangeBound("NDVI", 0.45, 0.95), RangeBound("EVI", 0.25, 0.70)),
    Stage.Ripening: (RangeBound("NDVI", 0.15, 0.70), RangeBound("MNDWI", None, -0.35, max_exclusive=True)),
}

RATIO_PAIRS = (
    ("ratio", IndexKind.NDVI, IndexKind.LSWI),
    ("ratio", IndexKind.EVI, IndexKind.LSWI),
    ("ratio", IndexKind.NDVI, IndexKind.EVI),
    ("ratio", IndexKind.NDVI, IndexKind.SAVI),
    ("ratio", IndexKind.SAVI, IndexKind.NDVI),
    ("difference", IndexKind.MNDWI, IndexKind.NDVI),
)


def derive_bounds(values, prange: PercentileRange, index, min_samples: int = MIN_SAMPLES) -> RangeBound:
    """Percentile bound from paddy-class samples (linear-interpolation quantiles)."""
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if v.size < min_samples:
        raise InsufficientSamplesError(f"{IndexKind(index).value}: {v.size} paddy samples, need {min_samples}")
    lo, hi = np.percentile(v, [prange.low, prange.high])
    return RangeBound(index, float(lo), float(hi))


@dataclass(frozen=True)
class CandidateScore:
    sensitivity: float
    specificity: float
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    @property
    def balance(self) -> float:
        return (self.sensitivity + self.specificity) / 2.0

    @classmethod
    def from_prediction(cls, predicted, labels) -> "CandidateScore":
        labels = np.asarray(labels, dtype=bool)
        predicted = np.asarray(predicted, dtype=bool)
        n_pos, n_neg = int(labels.sum()), int((~labels).sum())
        if n_pos == 0 or n_neg == 0:
            raise SingleClassError("reference set must contain both paddy and non-paddy pixels")
        tp = int((predicted & labels).sum())
        tn = int((~predicted & ~labels).sum())
        return cls(tp / n_pos, tn / n_neg, tp, n_pos - tp, tn, n_neg - tn)


def score_candidate(rule: StageRule, refs: ReferenceSamples) -> CandidateScore:
    """Sensitivity/specificity of one stage rule on the reference pixels. Nodata counts as not paddy."""
    predicted = evaluate_rule(refs.planes(rule.stage), rule) == 1
    return CandidateScore.from_prediction(predicted, refs.labels)


def _best(cands):
    """First candidate with the highest balance (candidates are in tie-break order)."""
    best = None
    for c in cands:
        if best is None or c[1].balance > best[1].balance:
            best = c
    return best


@dataclass
class LedgerRow:
    district: str
    stage: str
    index: str
    range: str
    method: str
    score: CandidateScore
    selected: bool = False

    def as_list(self):
        return [self.district, self.stage, self.index, self.range, self.method,
                f"{self.score.sensitivity:.6f}", f"{self.score.specificity:.6f}",
                f"{self.score.balance:.6f}", str(self.selected).lower()]


def write_ledger(path, rows: Sequence[LedgerRow]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())


def _range_candidates(stage, index, refs):
    paddy = refs.composites[(stage, index)][refs.labels]
    out = []
    for pr in (BROAD, INTERQUARTILE):
        try:
            out.append((pr.label, derive_bounds(paddy, pr, index)))
        except InsufficientSamplesError as exc:
            log.info("%s %s %s: %s", refs.district, stage.value, pr.label, exc)
    for b in LITERATURE_BOUNDS.get(stage, ()):
        if b.index is index:
            out.append(("custom", b))
    return out


def _ratio_candidates(stage, refs):
    out = []
    planes = refs.planes(stage)
    for kind, left, right in RATIO_PAIRS:
        if left not in planes or right not in planes:
            continue
        probe = RatioCriterion(kind, left, right, "within", (0.0, 0.0))
        q = probe.quantity(planes[left], planes[right])[refs.labels]
        q = q[~np.isnan(q)]
        if q.size < MIN_SAMPLES:
            continue
        lo, hi = np.percentile(q, [BROAD.low, BROAD.high])
        out.append(RatioCriterion(kind, left, right, "within", (float(lo), float(hi))))
    return out


def _greedy(base: StageRule, options, make, refs, limit=None, force_first=False):
    """Add options one at a time while balance strictly improves."""
    rule = base
    score = score_candidate(rule, refs) if not force_first else None
    chosen = []
    remaining = list(options)
    while remaining and (limit is None or len(chosen) < limit):
        trials = [(o, score_candidate(make(rule, o), refs)) for o in remaining]
        o, s = _best(trials)
        if score is not None and s.balance <= score.balance:
            break
        rule, score = make(rule, o), s
        chosen.append(o)
        remaining.remove(o)
    return rule, score


def calibrate_stage(stage: Stage, refs: ReferenceSamples, ledger: list):
    stage = Stage(stage)
    indices = sorted({k for (s, k) in refs.composites if s is stage}, key=list(IndexKind).index)
    per_index = []
    for k in indices:
        cands = []
        for label, bound in _range_candidates(stage, k, refs):
            sc = score_candidate(StageRule(stage, "basic", (bound,)), refs)
            row = LedgerRow(refs.district, stage.value, k.value, label, "basic", sc)
            ledger.append(row)
            cands.append((bound, sc, row))
        if cands:
            bound, sc, row = _best(cands)
            row.selected = True
            per_index.append((bound, sc))
    if not per_index:
        raise InsufficientSamplesError(f"{refs.district} {stage.value}: no index has enough paddy samples")

    # basic: best single-index bound, extended greedily with further index bounds
    per_index.sort(key=lambda bs: -bs[1].balance)      # stable: index order on ties
    add_bound = lambda r, b: StageRule(stage, "basic", r.bounds + (b,))
    basic, basic_score = _greedy(StageRule(stage, "basic", (per_index[0][0],)),
                                 [b for b, _ in per_index[1:]], add_bound, refs)

    methods = [("basic", basic, basic_score)]
    ratios = _ratio_candidates(stage, refs)
    if ratios:
        add_ratio = lambda r, c: StageRule(stage, "ratio_based", r.bounds, r.ratios + (c,))
        rb, rb_score = _greedy(StageRule(stage, "basic", basic.bounds), ratios, add_ratio, refs,
                               limit=3, force_first=True)
        methods.append(("ratio_based", rb, rb_score))
    if IndexKind.LSWI in indices and IndexKind.EVI in indices:
        le = StageRule(stage, "lswi_evi", basic.bounds)
        methods.append(("lswi_evi", le, score_candidate(le, refs)))

    rows = []
    for name, rule, sc in methods:
        label = "+".join([b.index.value for b in rule.bounds] + [c.label for c in rule.ratios])
        rows.append(LedgerRow(refs.district, stage.value, label, "selected", name, sc))
    ledger.extend(rows)
    i = max(range(len(methods)), key=lambda j: (methods[j][2].balance, -j))
    rows[i].selected = True
    return methods[i][1], methods[i][2]


def tsp_from_samples(refs: ReferenceSamples) -> TspParams:
    sig = {}
    for s, std in refs.ndvi_std.items():
        v = std[refs.labels & ~np.isnan(std)]
        p90 = float(np.percentile(v, 90)) if v.size else TSP_CLIP[1]
        sig[s] = float(np.clip(p90, *TSP_CLIP))
    return TspParams(sig)


def tpa_from_samples(refs: ReferenceSamples) -> TpaParams | None:
    try:
        early = refs.composites[(Stage.LandPreparation, IndexKind.NDVI)]
        peak = refs.composites[(Stage.Reproductive, IndexKind.NDVI)]
        late = refs.composites[(Stage.Ripening, IndexKind.NDVI)]
    except KeyError:
        return None
    m = refs.labels & ~(np.isnan(early) | np.isnan(peak) | np.isnan(late))
    if m.sum() < MIN_SAMPLES:
        return None
    pk = peak[m]
    lo, hi = np.percentile(pk, [5, 95])
    inc = np.percentile(pk - early[m], 5)
    dec = np.percentile(pk - late[m], 5)
    lo = float(np.clip(np.floor(lo * 100) / 100, 0.01, 0.98))
    hi = float(np.clip(np.ceil(hi * 100) / 100, lo + 0.01, 1.0))
    inc = float(np.floor(inc * 100) / 100)
    dec = float(np.floor(dec * 100) / 100)
    if inc <= 0 or dec <= 0:
        return None
    return TpaParams(lo, hi, inc, dec)


def classify_samples(cal: DistrictCalibration, refs: ReferenceSamples, use_tpa: bool = True) -> np.ndarray:
    """Pixelwise replay of the classifier on reference samples (no composite IQR, no focal filter)."""
    votes = np.zeros(len(refs), dtype=np.int8)
    tpa_ok = np.ones(len(refs), dtype=bool)
    if use_tpa and cal.tpa is not None:
        tpa_ok = tpa_filter(refs.composites[(Stage.LandPreparation, IndexKind.NDVI)],
                            refs.composites[(Stage.Reproductive, IndexKind.NDVI)],
                            refs.composites[(Stage.Ripening, IndexKind.NDVI)], cal.tpa)
    for s in AREA_STAGES:
        ok = evaluate_rule(refs.planes(s), cal.rules[s]) == 1
        if s in cal.tsp.sigma_max and s in refs.ndvi_std:
            std = refs.ndvi_std[s]
            with np.errstate(invalid="ignore"):
                ok &= np.isnan(std) | (std <= cal.tsp.sigma_max[s])
        votes += ok & tpa_ok
    if cal.combine_policy == "majority":
        return votes >= 2
    if cal.combine_policy == "all":
        return votes == 3
    return votes >= 1


def optimize_district(polygons, index_cubes, windows: StageWindows, district: str | None = None,
                      season=None, refs: ReferenceSamples | None = None):
    """Fit a complete district calibration.

    Returns ``(calibration, ledger_rows)``.
    """
    cubes = {IndexKind(k): v for k, v in index_cubes.items()}
    first = next(iter(cubes.values()))
    district = district or windows.district or first.district
    if refs is None:
        refs = reference_samples(polygons, cubes, windows, district)
    if refs.labels.all() or not refs.labels.any():
        raise SingleClassError(f"{district}: references must contain both paddy and non-paddy fields")
    season = season or (min(windows[Stage.LandPreparation][0], first.dates[0]),
                        max(windows[Stage.Ripening][1], first.dates[-1]))
    ledger: list[LedgerRow] = []
    rules, scores = {}, {}
    for s in STAGES:
        try:
            rules[s], scores[s] = calibrate_stage(s, refs, ledger)
        except InsufficientSamplesError:
            if s in AREA_STAGES:
                raise
            log.info("%s: no Ripening rule (insufficient samples)", district)
    review = [s.value for s in AREA_STAGES if scores[s].balance <= 0.5]
    if review:
        log.warning("%s: no candidate above balance 0.5 for %s; flagged for manual review", district, review)

    tsp = tsp_from_samples(refs)
    cal = DistrictCalibration(district=district, season=season, windows=windows, rules=rules, tsp=tsp,
                              needs_manual_review=bool(review))
    base = CandidateScore.from_prediction(classify_samples(cal, refs, use_tpa=False), refs.labels)
    ledger.append(LedgerRow(district, "combined", "NDVI", "-", "tsp", base, True))
    tpa = tpa_from_samples(refs)
    if tpa is not None:
        cal.tpa = tpa
        with_tpa = CandidateScore.from_prediction(classify_samples(cal, refs), refs.labels)
        keep = with_tpa.balance > base.balance
        ledger.append(LedgerRow(district, "combined", "NDVI", "-", "tsp+tpa", with_tpa, keep))
        if not keep:
            cal.tpa = None
            ledger[-2].selected = True
        else:
            ledger[-2].selected = False
    return cal, ledger


# ---------------------------------------------------------------------------
# district vs cluster comparison
# ---------------------------------------------------------------------------

def mean_windows(members: Sequence[StageWindows], name: str) -> StageWindows:
    """Stage windows averaged date-by-date over the member districts (rounded to whole days)."""
    def avg(ds):
        return dt.date.fromordinal(int(np.floor(np.mean([d.toordinal() for d in ds]) + 0.5)))
    return StageWindows(name, {s: (avg([w[s][0] for w in members]), avg([w[s][1] for w in members]))
                               for s in STAGES})


def read_clusters(path) -> dict[str, list[str]]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    clusters = doc.get("clusters", doc)
    if not isinstance(clusters, dict) or not all(isinstance(v, list) for v in clusters.values()):
        raise CalibrationError(f"{path}: expected {{cluster: [district, ...]}}")
    return {str(k): [str(d) for d in v] for k, v in clusters.items()}


@dataclass
class DistrictInputs:
    polygons: list
    index_cubes: dict
    windows: StageWindows


@dataclass
class ModeComparison:
    district_mode: dict
    cluster_mode: dict
    cluster_sizes: dict
    cluster_of: dict
    calibrations: dict = field(default_factory=dict, repr=False)

    @property
    def mean_district(self) -> float:
        return float(np.mean(list(self.district_mode.values())))

    @property
    def mean_cluster(self) -> float:
        return float(np.mean(list(self.cluster_mode.values())))

    def to_dict(self) -> dict:
        names = sorted(self.district_mode)
        return {
            "schema_version": 1,
            "metric": "overall accuracy on reference pixels",
            "cluster_sizes": dict(sorted(self.cluster_sizes.items())),
            "districts": [{"district": d, "cluster": self.cluster_of[d],
                           "district_mode": round(self.district_mode[d], 6),
                           "cluster_mode": round(self.cluster_mode[d], 6),
                           "delta": round(self.district_mode[d] - self.cluster_mode[d], 6)} for d in names],
            "mean": {"district_mode": round(self.mean_district, 6),
                     "cluster_mode": round(self.mean_cluster, 6),
                     "delta": round(self.mean_district - self.mean_cluster, 6)},
        }


def _accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def fit_cluster(name: str, members: Sequence[str], inputs: Mapping[str, DistrictInputs]):
    """Pooled calibration for one cluster and the per-member reference samples it was fit on."""
    if not members:
        raise CalibrationError(f"cluster {name!r} is empty")
    windows = mean_windows([inputs[d].windows for d in members], name)
    samples = {d: reference_samples(inputs[d].polygons, inputs[d].index_cubes, windows, d) for d in members}
    pooled = ReferenceSamples.pool([samples[d] for d in members], name)
    cal, ledger = optimize_district(None, inputs[members[0]].index_cubes, windows, name, refs=pooled)
    cal.cluster = {"name": name, "members": list(members)}
    return cal, ledger, samples


def compare_modes(inputs: Mapping[str, DistrictInputs], clusters: Mapping[str, Sequence[str]]) -> ModeComparison:
    cluster_of = {}
    for c, members in clusters.items():
        if not members:
            raise CalibrationError(f"cluster {c!r} is empty")
        for d in members:
            cluster_of[d] = c
    uncovered = sorted(set(inputs) - set(cluster_of))
    if uncovered:
        raise CalibrationError(f"cluster assignment does not cover {uncovered}")
    district_acc, cluster_acc, cals = {}, {}, {}
    for d in sorted(inputs):
        cal, _ = optimize_district(inputs[d].polygons, inputs[d].index_cubes, inputs[d].windows, d)
        refs = reference_samples(inputs[d].polygons, inputs[d].index_cubes, inputs[d].windows, d)
        district_acc[d] = _accuracy(classify_samples(cal, refs), refs.labels)
        cals[d] = cal
    for c in sorted(clusters):
        members = [d for d in clusters[c] if d in inputs]
        cal, _, samples = fit_cluster(c, members, inputs)
        cals[c] = cal
        for d in members:
            cluster_acc[d] = _accuracy(classify_samples(cal, samples[d]), samples[d].labels)
    return ModeComparison(district_acc, cluster_acc, {c: len(m) for c, m in clusters.items()},
                          cluster_of, cals)
