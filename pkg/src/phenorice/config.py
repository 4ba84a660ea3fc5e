"""District calibration: rule types and the strict JSON document format."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping

import jsonschema
import numpy as np

from .indices import DENOMINATOR_EPS, IndexKind
from .phenology import AREA_STAGES, STAGES, Stage, StageWindows

SCHEMA_VERSION = 1
METHODS = ("basic", "ratio_based", "lswi_evi")
COMBINE_POLICIES = ("majority", "all", "any")
LSWI_EVI_OFFSET = 0.05

# ESA WorldCover codes that cannot hold paddy: tree cover, shrubland,
# grassland, built-up, bare/sparse vegetation.
DEFAULT_EXCLUDED_LANDCOVER = (10, 20, 30, 50, 60)
DEFAULT_OUTLIER_MULTIPLIERS = {"NDVI": 2.0, "EVI": 2.0, "LSWI": 1.5}


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class RangeBound:
    index: IndexKind
    min: float | None = None
    max: float | None = None
    min_exclusive: bool = False
    max_exclusive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "index", IndexKind(self.index))
        if self.min is not None and self.max is not None and self.min > self.max:
            raise CalibrationError(f"{self.index.value} bound min {self.min} > max {self.max}")

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        ok = ~np.isnan(v)
        with np.errstate(invalid="ignore"):
            if self.min is not None:
                ok &= (v > self.min) if self.min_exclusive else (v >= self.min)
            if self.max is not None:
                ok &= (v < self.max) if self.max_exclusive else (v <= self.max)
        return ok

    def to_dict(self) -> dict:
        d = {"index": self.index.value, "min": self.min, "max": self.max}
        if self.min_exclusive:
            d["min_exclusive"] = True
        if self.max_exclusive:
            d["max_exclusive"] = True
        return d

    @classmethod
    def from_dict(cls, d) -> "RangeBound":
        return cls(d["index"], d.get("min"), d.get("max"),
                   d.get("min_exclusive", False), d.get("max_exclusive", False))


@dataclass(frozen=True)
class RatioCriterion:
    """``left / right`` (kind="ratio") or ``left - right`` (kind="difference") compared to bounds.

    Comparators "<" and ">" are strict against a single bound; "within" is
    inclusive on ``(low, high)``.
    """

    kind: str
    left: IndexKind
    right: IndexKind
    comparator: str
    bounds: tuple

    def __post_init__(self):
        object.__setattr__(self, "left", IndexKind(self.left))
        object.__setattr__(self, "right", IndexKind(self.right))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        if self.kind not in ("ratio", "difference"):
            raise CalibrationError(f"unknown ratio kind {self.kind!r}")
        need = 2 if self.comparator == "within" else 1
        if self.comparator not in ("<", ">", "within"):
            raise CalibrationError(f"unknown comparator {self.comparator!r}")
        if len(self.bounds) != need:
            raise CalibrationError(f"comparator {self.comparator!r} needs {need} bound(s)")
        if need == 2 and self.bounds[0] > self.bounds[1]:
            raise CalibrationError(f"within bounds out of order: {self.bounds}")

    @property
    def label(self) -> str:
        op = "/" if self.kind == "ratio" else "-"
        return f"{self.left.value}{op}{self.right.value}"

    def quantity(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        if self.kind == "difference":
            return left - right
        bad = np.abs(right) < DENOMINATOR_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(bad, np.nan, left / np.where(bad, 1.0, right))

    def evaluate(self, planes: Mapping) -> np.ndarray:
        q = self.quantity(planes[self.left], planes[self.right])
        with np.errstate(invalid="ignore"):
            if self.comparator == "<":
                ok = q < self.bounds[0]
            elif self.comparator == ">":
                ok = q > self.bounds[0]
            else:
                ok = (q >= self.bounds[0]) & (q <= self.bounds[1])
        return ok & ~np.isnan(q)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "left": self.left.value, "right": self.right.value,
                "comparator": self.comparator, "bounds": list(self.bounds)}

    @classmethod
    def from_dict(cls, d) -> "RatioCriterion":
        return cls(d["kind"], d["left"], d["right"], d["comparator"], tuple(d["bounds"]))


@dataclass(frozen=True)
class StageRule:
    stage: Stage
    method: str = "basic"
    bounds: tuple = ()
    ratios: tuple = ()
    lswi_evi_offset: float = LSWI_EVI_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "bounds", tuple(self.bounds))
        object.__setattr__(self, "ratios", tuple(self.ratios))
        if self.method not in METHODS:
            raise CalibrationError(f"unknown method {self.method!r}")
        if len(self.ratios) > 3:
            raise CalibrationError(f"{self.stage.value}: at most 3 ratio criteria, got {len(self.ratios)}")
        if self.method == "ratio_based" and not self.ratios:
            raise CalibrationError(f"{self.stage.value}: ratio_based rule needs ratio criteria")
        if self.method != "ratio_based" and self.ratios:
            raise CalibrationError(f"{self.stage.value}: ratio criteria given for method {self.method!r}")

    def indices_used(self) -> list[IndexKind]:
        used = {b.index for b in self.bounds}
        for r in self.ratios:
            used |= {r.left, r.right}
        if self.method == "lswi_evi":
            used |= {IndexKind.LSWI, IndexKind.EVI}
        return [k for k in IndexKind if k in used]

    def to_dict(self) -> dict:
        d = {"method": self.method, "bounds": [b.to_dict() for b in self.bounds],
             "ratios": [r.to_dict() for r in self.ratios]}
        if self.method == "lswi_evi":
            d["lswi_evi_offset"] = self.lswi_evi_offset
        return d

    @classmethod
    def from_dict(cls, stage, d) -> "StageRule":
        return cls(stage, d["method"], tuple(RangeBound.from_dict(b) for b in d.get("bounds", [])),
                   tuple(RatioCriterion.from_dict(r) for r in d.get("ratios", [])),
                   d.get("lswi_evi_offset", LSWI_EVI_OFFSET))


@dataclass(frozen=True)
class TspParams:
    sigma_max: dict

    def __post_init__(self):
        object.__setattr__(self, "sigma_max", {Stage(k): float(v) for k, v in self.sigma_max.items()})
        for s, v in self.sigma_max.items():
            if not 0 < v < 1:
                raise CalibrationError(f"TSP sigma for {s.value} must be in (0, 1), got {v}")

    @classmethod
    def uniform(cls, sigma: float, stages=STAGES) -> "TspParams":
        return cls({s: sigma for s in stages})


@dataclass(frozen=True)
class TpaParams:
    peak_min: float
    peak_max: float
    min_increase: float
    min_decrease: float

    def __post_init__(self):
        if not 0 < self.peak_min < self.peak_max <= 1:
            raise CalibrationError(f"need 0 < peak_min < peak_max <= 1, got {self.peak_min}, {self.peak_max}")
        if not (self.min_increase > 0 and self.min_decrease > 0):
            raise CalibrationError("TPA increase/decrease thresholds must be positive")

    def to_dict(self):
        return {"peak_min": self.peak_min, "peak_max": self.peak_max,
                "min_increase": self.min_increase, "min_decrease": self.min_decrease}


@dataclass(frozen=True)
class ExclusionPolicy:
    water_permanent: bool = True
    water_seasonal: bool = True
    landcover_classes: tuple = DEFAULT_EXCLUDED_LANDCOVER

    def to_dict(self):
        return {"water_permanent": self.water_permanent, "water_seasonal": self.water_seasonal,
                "landcover_classes": list(self.landcover_classes)}


@dataclass
class DistrictCalibration:
    district: str
    season: tuple[dt.date, dt.date]
    windows: StageWindows
    rules: dict
    tsp: TspParams
    tpa: TpaParams | None = None
    combine_policy: str = "majority"
    exclusions: ExclusionPolicy = field(default_factory=ExclusionPolicy)
    outlier_multipliers: dict = field(default_factory=lambda: dict(DEFAULT_OUTLIER_MULTIPLIERS))
    focal_radius_m: float = 20.0
    needs_manual_review: bool = False
    description: str = ""
    cluster: dict | None = None

    def __post_init__(self):
        self.rules = {Stage(k): v for k, v in self.rules.items()}
        missing = [s.value for s in AREA_STAGES if s not in self.rules]
        if missing:
            raise CalibrationError(f"calibration lacks rules for {missing}")
        for s, r in self.rules.items():
            if r.stage is not s:
                raise CalibrationError(f"rule keyed {s.value} is for stage {r.stage.value}")
        if self.combine_policy not in COMBINE_POLICIES:
            raise CalibrationError(f"unknown combine policy {self.combine_policy!r}")
        if self.season[0] > self.season[1]:
            raise CalibrationError("season end before start")
        self.outlier_multipliers = {IndexKind(k).value: float(v)
                                    for k, v in self.outlier_multipliers.items()}
        for k, v in self.outlier_multipliers.items():
            if not v > 0:
                raise CalibrationError(f"outlier multiplier for {k} must be > 0")

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "district": self.district,
            "description": self.description,
            "season": {"start": self.season[0].isoformat(), "end": self.season[1].isoformat()},
            "stage_windows": self.windows.to_dict(),
            "stage_rules": {s.value: self.rules[s].to_dict() for s in STAGES if s in self.rules},
            "tsp": {s.value: self.tsp.sigma_max[s] for s in STAGES if s in self.tsp.sigma_max},
            "tpa": self.tpa.to_dict() if self.tpa else None,
            "combine_policy": self.combine_policy,
            "exclusions": self.exclusions.to_dict(),
            "outlier_multipliers": dict(sorted(self.outlier_multipliers.items())),
            "focal_radius_m": self.focal_radius_m,
            "needs_manual_review": self.needs_manual_review,
        }
        if self.cluster is not None:
            d["cluster"] = self.cluster
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistrictCalibration":
        validate_document(d)
        season = (dt.date.fromisoformat(d["season"]["start"]), dt.date.fromisoformat(d["season"]["end"]))
        exc = d.get("exclusions", {})
        return cls(
            district=d["district"],
            season=season,
            windows=StageWindows.from_dict(d["district"], d["stage_windows"]),
            rules={Stage(k): StageRule.from_dict(k, v) for k, v in d["stage_rules"].items()},
            tsp=TspParams(d["tsp"]),
            tpa=TpaParams(**d["tpa"]) if d.get("tpa") else None,
            combine_policy=d.get("combine_policy", "majority"),
            exclusions=ExclusionPolicy(exc.get("water_permanent", True), exc.get("water_seasonal", True),
                                       tuple(exc.get("landcover_classes", DEFAULT_EXCLUDED_LANDCOVER))),
            outlier_multipliers=d.get("outlier_multipliers", DEFAULT_OUTLIER_MULTIPLIERS),
            focal_radius_m=d.get("focal_radius_m", 20.0),
            needs_manual_review=d.get("needs_manual_review", False),
            description=d.get("description", ""),
            cluster=d.get("cluster"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def load_calibration(path) -> DistrictCalibration:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return DistrictCalibration.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise CalibrationError(f"{path}: {exc}") from exc


def save_calibration(cal: DistrictCalibration, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cal.dumps())


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_index = {"enum": [k.value for k in IndexKind]}
_stage = {"enum": [s.value for s in STAGES]}
_date = {"type": "string", "pattern": r"^\d{4}-\d{2}-\d{2}$"}
_num_or_null = {"type": ["number", "null"]}

_bound = {
    "type": "object",
    "additionalProperties": False,
    "required": ["index"],
    "properties": {"index": _index, "min": _num_or_null, "max": _num_or_null,
                   "min_exclusive": {"type": "boolean"}, "max_exclusive": {"type": "boolean"}},
}
_ratio = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "left", "right", "comparator", "bounds"],
    "properties": {"kind": {"enum": ["ratio", "difference"]}, "left": _index, "right": _index,
                   "comparator": {"enum": ["<", ">", "within"]},
                   "bounds": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2}},
}
_rule = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method", "bounds", "ratios"],
    "properties": {"method": {"enum": list(METHODS)},
                   "bounds": {"type": "array", "items": _bound},
                   "ratios": {"type": "array", "items": _ratio, "maxItems": 3},
                   "lswi_evi_offset": {"type": "number"}},
}
_window = {"type": "object", "additionalProperties": False, "required": ["start", "end"],
           "properties": {"start": _date, "end": _date}}


def _per_stage(item, required):
    return {"type": "object", "additionalProperties": False, "required": list(required),
            "properties": {s.value: item for s in STAGES}}


CALIBRATION_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "district", "season", "stage_windows", "stage_rules", "tsp"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "district": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "season": _window,
        "stage_windows": _per_stage(_window, [s.value for s in STAGES]),
        "stage_rules": _per_stage(_rule, [s.value for s in AREA_STAGES]),
        "tsp": _per_stage({"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, []),
        "tpa": {"oneOf": [{"type": "null"}, {
            "type": "object", "additionalProperties": False,
            "required": ["peak_min", "peak_max", "min_increase", "min_decrease"],
            "properties": {k: {"type": "number"} for k in
                           ("peak_min", "peak_max", "min_increase", "min_decrease")}}]},
        "combine_policy": {"enum": list(COMBINE_POLICIES)},
        "exclusions": {"type": "object", "additionalProperties": False, "properties": {
            "water_permanent": {"type": "boolean"}, "water_seasonal": {"type": "boolean"},
            "landcover_classes": {"type": "array", "items": {"type": "integer"}}}},
        "outlier_multipliers": {"type": "object", "additionalProperties": False,
                                "properties": {k.value: {"type": "number", "exclusiveMinimum": 0}
                                               for k in IndexKind}},
        "focal_radius_m": {"type": "number", "exclusiveMinimum": 0},
        "needs_manual_review": {"type": "boolean"},
        "cluster": {"type": "object", "additionalProperties": False, "required": ["name", "members"],
                    "properties": {"name": {"type": "string"},
                                   "members": {"type": "array", "items": {"type": "string"}}}},
    },
}


def validate_document(doc: Mapping):
    try:
        jsonschema.validate(doc, CALIBRATION_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise CalibrationError(f"calibration document invalid at {where}: {exc.message}") from None
