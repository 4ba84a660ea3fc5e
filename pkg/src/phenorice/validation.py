"""Accuracy assessment, field-size strata and area reconciliation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .districts import UnknownDistrictError, default_dictionary
from .raster import BinaryMask

log = logging.getLogger("phenorice.validate")

REPORT_SCHEMA_VERSION = 1
Z95 = 1.96
ACCURACY_COLUMNS = ("district", "oa", "kappa", "f1", "pa", "ua", "area_ha", "points", "moe")
OFFICIAL_SOURCES = ("DES", "TDA")


class ValidationError(ValueError):
    pass


class FieldSizeCategory(Enum):
    TINY = (0.0, 0.2)
    SMALL = (0.2, 0.8)
    MEDIUM = (0.8, 4.0)
    LARGE = (4.0, math.inf)

    @property
    def low(self) -> float:
        return self.value[0]

    @property
    def high(self) -> float:
        return self.value[1]

    @classmethod
    def of(cls, area_ha: float) -> "FieldSizeCategory":
        if not area_ha >= 0:
            raise ValueError(f"field area must be >= 0, got {area_ha}")
        for c in cls:
            if c.low <= area_ha < c.high:
                return c
        raise ValueError(area_ha)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Paddy-vs-rest counts. Counts may be real-valued (weighted tallies)."""

    tp: float = 0
    fp: float = 0
    fn: float = 0
    tn: float = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def _ratio(num, den):
    return num / den if den > 0 else None


@dataclass(frozen=True)
class MetricSet:
    """Accuracy figures for one confusion matrix. ``None`` marks an undefined value."""

    overall_accuracy: float
    balanced_accuracy: float | None
    kappa: float | None
    f1: float | None
    producer_accuracy: float | None
    user_accuracy: float | None
    margin_of_error: float
    total: float

    def to_dict(self):
        return asdict(self)


def f1_from_rates(pa, ua):
    if pa is None or ua is None or pa + ua == 0:
        return None
    return 2 * pa * ua / (pa + ua)


def kappa_of(cm: ConfusionMatrix):
    n = cm.total
    oa = (cm.tp + cm.tn) / n
    pe = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / (n * n)
    if pe >= 1:
        return None
    return (oa - pe) / (1 - pe)


def metrics(cm: ConfusionMatrix) -> MetricSet:
    n = cm.total
    if not n > 0:
        raise ValidationError("metrics need a non-empty confusion matrix")
    oa = (cm.tp + cm.tn) / n
    pa = _ratio(cm.tp, cm.tp + cm.fn)
    ua = _ratio(cm.tp, cm.tp + cm.fp)
    spec = _ratio(cm.tn, cm.tn + cm.fp)
    balanced = (pa + spec) / 2 if pa is not None and spec is not None else None
    moe = Z95 * math.sqrt(oa * (1 - oa) / n)
    return MetricSet(oa, balanced, kappa_of(cm), f1_from_rates(pa, ua), pa, ua, moe, n)


def area_from_mask(mask: BinaryMask, pixel_size_m: float | None = None) -> float:
    ps = mask.grid.pixel_size if pixel_size_m is None else pixel_size_m
    return mask.count() * ps * ps / 10_000.0


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Allocation:
    points_per_district: int = 200
    paddy_weight: float = 1.5


@dataclass(frozen=True)
class ValidationPoint:
    district: str
    polygon_id: str
    row: int
    col: int
    x: float
    y: float
    truth: bool | None
    predicted: bool | None
    category: FieldSizeCategory


def largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer split of ``total`` proportional to ``weights``; ties go to the earlier stratum."""
    w = np.asarray(weights, dtype=np.float64)
    if total <= 0 or w.sum() <= 0:
        return [0] * len(w)
    exact = total * w / w.sum()
    base = np.floor(exact).astype(int)
    rem = exact - base
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[: total - int(base.sum())]:
        base[i] += 1
    return [int(b) for b in base]


def stratum_counts(areas: Mapping[tuple, float], allocation: Allocation) -> dict:
    """Points per (category, is_paddy) stratum: proportional to area, then paddy up-weighted."""
    keys = sorted(areas, key=lambda k: (list(FieldSizeCategory).index(k[0]), k[1]))
    base = largest_remainder(allocation.points_per_district, [areas[k] for k in keys])
    out = {}
    for k, n in zip(keys, base):
        out[k] = int(math.floor(n * allocation.paddy_weight + 0.5)) if k[1] else n
    return out


def stratify_samples(polygons, masks: Mapping[str, BinaryMask], allocation: Allocation = Allocation(),
                     seed: int = 0) -> list[ValidationPoint]:
    """Area-proportional stratified random points on the reference fields.

    Strata are (field-size category, class) within each district. A pixel
    where the mask is nodata is predicted non-paddy.
    """
    rng = np.random.default_rng(seed)
    points = []
    by_district: dict[str, list] = {}
    for p in polygons:
        by_district.setdefault(p.district, []).append(p)
    for district in sorted(by_district):
        if district not in masks:
            log.warning("no mask for district %s; its reference fields are skipped", district)
            continue
        mask = masks[district]
        strata: dict[tuple, list] = {}
        for p in by_district[district]:
            strata.setdefault((FieldSizeCategory.of(p.area_ha), p.is_paddy), []).append(p)
        areas = {k: sum(p.area_ha for p in v) for k, v in strata.items()}
        counts = stratum_counts(areas, allocation)
        for key in sorted(counts, key=lambda k: (list(FieldSizeCategory).index(k[0]), k[1])):
            n = counts[key]
            cat, paddy = key
            pool = []
            for p in strata[key]:
                try:
                    px = p.resolve_pixels(mask.grid)
                except ValueError:
                    continue
                pool.extend((p.polygon_id, int(r), int(c)) for r, c in px)
            if not pool:
                log.warning("%s: stratum %s/%s has no pixels; skipped", district, cat.name,
                            "paddy" if paddy else "non_paddy")
                continue
            if n > len(pool):
                log.warning("%s: stratum %s/%s wants %d points, only %d pixels", district, cat.name,
                            "paddy" if paddy else "non_paddy", n, len(pool))
                n = len(pool)
            for i in sorted(rng.choice(len(pool), size=n, replace=False)):
                pid, r, c = pool[i]
                x, y = mask.grid.pixel_center(r, c)
                points.append(ValidationPoint(district, pid, r, c, float(x), float(y), paddy,
                                              bool(mask.values[r, c] == 1), cat))
    return points


def confusion(points: Sequence[ValidationPoint]) -> dict[tuple, ConfusionMatrix]:
    """Confusion matrices keyed by (district, category)."""
    tallies: dict[tuple, list] = {}
    for p in points:
        if p.truth is None or p.predicted is None:
            raise ValidationError(f"unlabeled point at {p.district} ({p.row}, {p.col})")
        t = tallies.setdefault((p.district, p.category), [0, 0, 0, 0])
        if p.truth and p.predicted:
            t[0] += 1
        elif not p.truth and p.predicted:
            t[1] += 1
        elif p.truth:
            t[2] += 1
        else:
            t[3] += 1
    return {k: ConfusionMatrix(*v) for k, v in sorted(tallies.items(), key=lambda kv: (kv[0][0], kv[0][1].low))}


def rollup(cms: Mapping[tuple, ConfusionMatrix], by: str) -> dict:
    out: dict = {}
    for (district, cat), cm in cms.items():
        key = district if by == "district" else cat
        out[key] = out.get(key, ConfusionMatrix()) + cm
    return out


# ---------------------------------------------------------------------------
# area reconciliation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AreaStats:
    r2: float
    rmse_ha: float
    mae_ha: float
    bias_ha: float
    pearson_r: float
    slope: float
    intercept: float
    n: int
    diff_percent: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["diff_percent"] = dict(sorted(self.diff_percent.items()))
        return d


def diff_percent(mapped: float, official: float) -> float:
    return 100.0 * (mapped - official) / official


def _match(mapped: Mapping, official: Mapping, dictionary):
    dictionary = dictionary or default_dictionary()
    canon_m, canon_o, unknown = {}, {}, []
    for src, dst in ((mapped, canon_m), (official, canon_o)):
        for name, v in src.items():
            try:
                dst[dictionary.resolve(name)] = float(v)
            except UnknownDistrictError:
                unknown.append(name)
    if unknown:
        raise UnknownDistrictError(unknown)
    unmatched = sorted(set(canon_m) ^ set(canon_o))
    if unmatched:
        raise UnknownDistrictError(unmatched)
    names = sorted(canon_m)
    return names, np.array([canon_m[n] for n in names]), np.array([canon_o[n] for n in names])


def area_stats(mapped: Mapping[str, float], official: Mapping[str, float], dictionary=None) -> AreaStats:
    """Regression of mapped on official area; names are matched after normalization."""
    names, m, o = _match(mapped, official, dictionary)
    if len(names) < 3:
        raise ValidationError(f"area_stats needs >= 3 matched districts, got {len(names)}")
    if np.any(o <= 0):
        raise ValidationError("official areas must be positive")
    resid_raw = m - o
    rmse = float(np.sqrt(np.mean(resid_raw ** 2)))
    mae = float(np.mean(np.abs(resid_raw)))
    bias = float(np.mean(resid_raw))
    ox, my = o - o.mean(), m - m.mean()
    sxx, syy, sxy = float(ox @ ox), float(my @ my), float(ox @ my)
    slope = sxy / sxx if sxx > 0 else math.nan
    intercept = float(m.mean() - slope * o.mean()) if sxx > 0 else math.nan
    if sxx > 0 and syy > 0:
        r = sxy / math.sqrt(sxx * syy)
        fit = intercept + slope * o
        r2 = 1.0 - float(((m - fit) ** 2).sum()) / syy
    else:
        r = math.nan
        r2 = 1.0 if np.allclose(m, o) else math.nan
    diffs = {n: diff_percent(a, b) for n, a, b in zip(names, m, o)}
    return AreaStats(r2, rmse, mae, bias, r, slope, intercept, len(names), diffs)


def read_official(path, dictionary=None) -> dict[str, dict]:
    """Official statistics CSV ``district,official_ha,source``; returns {canonical: {source: ha}}."""
    dictionary = dictionary or default_dictionary()
    out: dict[str, dict] = {}
    unknown = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"district", "official_ha", "source"}
        if not need <= set(reader.fieldnames or []):
            raise ValidationError(f"{path}: expected columns {sorted(need)}")
        for i, row in enumerate(reader, start=2):
            src = row["source"].strip()
            if src not in OFFICIAL_SOURCES:
                raise ValidationError(f"{path}:{i}: source {src!r} not in {OFFICIAL_SOURCES}")
            try:
                name = dictionary.resolve(row["district"])
            except UnknownDistrictError:
                unknown.append(row["district"])
                continue
            try:
                out.setdefault(name, {})[src] = float(row["official_ha"])
            except ValueError:
                raise ValidationError(f"{path}:{i}: bad official_ha {row['official_ha']!r}") from None
    if unknown:
        raise UnknownDistrictError(unknown)
    return out


def official_series(official: Mapping[str, dict], source: str = "DES") -> dict[str, float]:
    return {d: v[source] for d, v in official.items() if source in v}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _round(v, nd=6):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return None
    return round(float(v), nd)


def _metric_block(cm: ConfusionMatrix) -> dict:
    m = metrics(cm)
    return {"confusion": {"tp": cm.tp, "fp": cm.fp, "fn": cm.fn, "tn": cm.tn},
            "oa": _round(m.overall_accuracy), "balanced_accuracy": _round(m.balanced_accuracy),
            "kappa": _round(m.kappa), "f1": _round(m.f1), "pa": _round(m.producer_accuracy),
            "ua": _round(m.user_accuracy), "moe": _round(m.margin_of_error), "points": m.total}


def build_report(district_cms: Mapping[tuple, ConfusionMatrix] | None, areas: Mapping[str, float],
                 stats: AreaStats | None = None, official_total: float | None = None,
                 meta: Mapping | None = None) -> dict:
    """Deterministic report document with district, category and state blocks.

    ``district_cms`` is keyed by (district, category) as returned by ``confusion``.
    """
    cms = district_cms or {}
    by_d = rollup(cms, "district")
    by_c = rollup(cms, "category")
    districts = []
    for d in sorted(set(areas) | set(by_d)):
        block = {"district": d, "area_ha": _round(areas.get(d, 0.0), 4)}
        if d in by_d:
            block.update(_metric_block(by_d[d]))
            block["categories"] = {c.name: _metric_block(cm) for (dd, c), cm in cms.items() if dd == d}
        districts.append(block)
    state_area = math.fsum(float(areas[d]) for d in sorted(areas))
    state = {"area_ha": _round(state_area, 4), "districts": len(districts)}
    if by_d:
        total = ConfusionMatrix()
        for d in sorted(by_d):
            total = total + by_d[d]
        state.update(_metric_block(total))
    if official_total:
        state["official_ha"] = official_total
        state["diff_percent"] = _round(diff_percent(state_area, official_total), 4)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "metadata": {"margin_of_error": "normal approximation, 95% (1.96 * sqrt(OA(1-OA)/N))",
                     "area_unit": "ha", "undefined_metric": None,
                     "large_category": "LARGE is [4.0 ha, inf) per the field-size table",
                     **dict(meta or {})},
        "districts": districts,
        "categories": [{"category": c.name, "range_ha": [c.low, None if math.isinf(c.high) else c.high],
                        **_metric_block(by_c[c])} for c in FieldSizeCategory if c in by_c],
        "state": state,
        "area_stats": stats.to_dict() if stats else None,
    }


def _fmt(v):
    return "" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))


def write_report(report: dict, out_dir, points: Sequence[ValidationPoint] = ()):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    with open(out / "accuracy.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCURACY_COLUMNS)
        for b in report["districts"]:
            w.writerow([b["district"], _fmt(b.get("oa")), _fmt(b.get("kappa")), _fmt(b.get("f1")),
                        _fmt(b.get("pa")), _fmt(b.get("ua")), _fmt(b["area_ha"]),
                        _fmt(b.get("points", 0)), _fmt(b.get("moe"))])
    with open(out / "categories.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("category", "oa", "kappa", "f1", "pa", "ua", "points", "moe"))
        for b in report["categories"]:
            w.writerow([b["category"]] + [_fmt(b.get(k)) for k in ("oa", "kappa", "f1", "pa", "ua", "points", "moe")])
    with open(out / "points.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("district", "polygon_id", "row", "col", "x", "y", "truth", "predicted", "category"))
        for p in points:
            w.writerow([p.district, p.polygon_id, p.row, p.col, repr(p.x), repr(p.y),
                        int(p.truth), int(p.predicted), p.category.name])
