"""Stage model, trajectory smoothing, transition detection and stage composites."""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .raster import IndexCube

log = logging.getLogger("phenorice.phenology")


class Stage(str, Enum):
    LandPreparation = "LandPreparation"
    Vegetative = "Vegetative"
    Reproductive = "Reproductive"
    Ripening = "Ripening"

    def __str__(self):
        return self.value

    @property
    def order(self) -> int:
        return STAGES.index(self)


STAGES = (Stage.LandPreparation, Stage.Vegetative, Stage.Reproductive, Stage.Ripening)
AREA_STAGES = STAGES[:3]

# Observed range of stage durations across districts (days).
STAGE_DURATION_RANGE = (17, 64)


class StageWindowError(ValueError):
    pass


class EmptyWindowError(ValueError):
    def __init__(self, stage, start, end):
        self.stage = Stage(stage)
        super().__init__(f"no cube dates fall in the {self.stage.value} window {start}..{end}")


class UnresolvedTransitionError(ValueError):
    def __init__(self, stage, detail=""):
        self.stage = Stage(stage)
        super().__init__(f"transition into {self.stage.value} not crossed by a majority of "
                         f"reference fields{': ' + detail if detail else ''}")


class ShortSeriesWarning(UserWarning):
    pass


@dataclass
class StageWindows:
    """Inclusive start/end dates of each growth stage for one district."""

    district: str
    windows: dict[Stage, tuple[dt.date, dt.date]]

    def __post_init__(self):
        self.windows = {Stage(k): (v[0], v[1]) for k, v in self.windows.items()}
        missing = [s.value for s in STAGES if s not in self.windows]
        if missing:
            raise StageWindowError(f"missing window(s) for {missing}")
        prev_end = None
        for s in STAGES:
            start, end = self.windows[s]
            if end < start:
                raise StageWindowError(f"{s.value}: end {end} before start {start}")
            if prev_end is not None and start <= prev_end:
                raise StageWindowError(f"{s.value} starts {start}, overlapping previous stage end {prev_end}")
            prev_end = end

    def __getitem__(self, stage) -> tuple[dt.date, dt.date]:
        return self.windows[Stage(stage)]

    def duration(self, stage) -> int:
        start, end = self[stage]
        return (end - start).days + 1

    def check_durations(self, duration_range=STAGE_DURATION_RANGE) -> list[str]:
        lo, hi = duration_range
        return [f"{s.value}: {self.duration(s)} days outside [{lo}, {hi}]"
                for s in STAGES if not lo <= self.duration(s) <= hi]

    def to_dict(self) -> dict:
        return {s.value: {"start": self[s][0].isoformat(), "end": self[s][1].isoformat()}
                for s in STAGES}

    @classmethod
    def from_dict(cls, district: str, d: Mapping) -> "StageWindows":
        return cls(district, {Stage(k): (dt.date.fromisoformat(v["start"]),
                                         dt.date.fromisoformat(v["end"])) for k, v in d.items()})

    def shifted(self, days: int) -> "StageWindows":
        delta = dt.timedelta(days=days)
        return StageWindows(self.district, {s: (a + delta, b + delta) for s, (a, b) in self.windows.items()})


def windows_from_transitions(district, season_start, season_end, transitions) -> StageWindows:
    """Build windows from the three transition dates (start of Vegetative, Reproductive, Ripening)."""
    t1, t2, t3 = transitions
    one = dt.timedelta(days=1)
    if not season_start < t1 < t2 < t3 <= season_end:
        raise StageWindowError(
            f"transition dates out of order: season {season_start}..{season_end}, {t1}, {t2}, {t3}")
    return StageWindows(district, {
        Stage.LandPreparation: (season_start, t1 - one),
        Stage.Vegetative: (t1, t2 - one),
        Stage.Reproductive: (t2, t3 - one),
        Stage.Ripening: (t3, season_end),
    })


# ---------------------------------------------------------------------------
# Savitzky-Golay smoothing
# ---------------------------------------------------------------------------

def savgol_weights(n: int, window: int = 7, order: int = 3) -> np.ndarray:
    """Smoothing matrix ``W`` (n x n) so that ``smoothed = W @ y``.

    Interior rows hold the usual centred least-squares weights. Near the ends
    the window is truncated to the available samples and the polynomial degree
    is capped at ``len(window) - 1``.
    """
    if window % 2 != 1 or window < 1:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if not 0 <= order < window:
        raise ValueError(f"order must satisfy 0 <= order < window, got {order}")
    half = window // 2
    w = np.zeros((n, n))
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        x = np.arange(lo, hi, dtype=np.float64) - i
        deg = min(order, hi - lo - 1)
        vander = np.vander(x, deg + 1, increasing=True)
        w[i, lo:hi] = np.linalg.pinv(vander)[0]
    return w


def _fill_gaps(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Linear interpolation in time over NaN gaps, per series along axis 0."""
    flat = y.reshape(y.shape[0], -1).copy()
    gaps = np.isnan(flat)
    for j in np.flatnonzero(gaps.any(axis=0)):
        ok = ~gaps[:, j]
        if ok.any():
            flat[gaps[:, j], j] = np.interp(t[gaps[:, j]], t[ok], flat[ok, j])
    return flat.reshape(y.shape)


def smooth_savgol(series, window: int = 7, order: int = 3, t=None) -> np.ndarray:
    """Savitzky-Golay smoothing along axis 0.

    NaN gaps are filled by linear interpolation in ``t`` (sample index if not
    given) before smoothing and set back to NaN afterwards. A series shorter
    than ``window`` is returned unchanged with a :class:`ShortSeriesWarning`.
    """
    y = np.array(series, dtype=np.float64)
    n = y.shape[0]
    if n < window:
        warnings.warn(f"series of length {n} shorter than window {window}; not smoothed",
                      ShortSeriesWarning, stacklevel=2)
        return y
    t = np.arange(n, dtype=np.float64) if t is None else np.asarray(t, dtype=np.float64)
    gaps = np.isnan(y)
    filled = _fill_gaps(y, t) if gaps.any() else y
    w = savgol_weights(n, window, order)
    out = np.zeros_like(filled)
    # fixed-order accumulation keeps results independent of array layout
    for i in range(n):
        for j in np.flatnonzero(w[i]):
            out[i] += w[i, j] * filled[j]
    out[gaps] = np.nan
    return out


# ---------------------------------------------------------------------------
# transition detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionThreshold:
    """NDVI level marking entry into ``stage``.

    ``direction`` is "up" or "down". With ``relative_to_peak`` the level is
    the field's own peak NDVI minus ``level`` and the search starts at the peak.
    """

    stage: Stage
    level: float
    direction: str = "up"
    relative_to_peak: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        if self.direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")

    def to_dict(self):
        return {"stage": self.stage.value, "level": self.level, "direction": self.direction,
                "relative_to_peak": self.relative_to_peak}


DEFAULT_TRANSITIONS = (
    TransitionThreshold(Stage.Vegetative, 0.30, "up"),
    TransitionThreshold(Stage.Reproductive, 0.45, "up"),
    TransitionThreshold(Stage.Ripening, 0.10, "down", relative_to_peak=True),
)


@dataclass
class CrossingResult:
    index: np.ndarray       # first crossing sample per field, -1 if never
    multi: np.ndarray       # field crossed more than once


def first_crossings(traj: np.ndarray, threshold: TransitionThreshold) -> CrossingResult:
    traj = np.atleast_2d(np.asarray(traj, dtype=np.float64))
    n_fields, n = traj.shape
    idx = np.full(n_fields, -1)
    multi = np.zeros(n_fields, dtype=bool)
    for f in range(n_fields):
        y = traj[f]
        if np.isnan(y).all():
            continue
        start = 0
        level = threshold.level
        if threshold.relative_to_peak:
            start = int(np.nanargmax(y))
            level = np.nanmax(y) - threshold.level
        seg = y[start:]
        with np.errstate(invalid="ignore"):
            hit = seg >= level if threshold.direction == "up" else seg <= level
        hit &= ~np.isnan(seg)
        if hit.any():
            idx[f] = start + int(np.argmax(hit))
            entries = np.count_nonzero(hit[1:] & ~hit[:-1]) + int(hit[0])
            multi[f] = entries > 1
    return CrossingResult(idx, multi)


def majority_crossing_date(dates: Sequence[dt.date], crossing_idx: np.ndarray):
    """Earliest date at which strictly more than half the fields have crossed, or None."""
    n = len(crossing_idx)
    days = sorted(dates[i] for i in crossing_idx if i >= 0)
    need = n // 2 + 1
    if len(days) < need:
        return None
    return days[need - 1]


@dataclass
class TransitionDiagnostics:
    crossing_share: dict[str, float] = field(default_factory=dict)
    multi_crossing_fields: dict[str, list] = field(default_factory=dict)


def detect_stage_transitions(dates: Sequence[dt.date], trajectories, thresholds=DEFAULT_TRANSITIONS,
                             season: tuple[dt.date, dt.date] | None = None, district: str = "",
                             field_ids: Sequence | None = None,
                             duration_range=STAGE_DURATION_RANGE,
                             diagnostics: TransitionDiagnostics | None = None) -> StageWindows:
    """Stage windows from smoothed per-field NDVI trajectories (fields x dates).

    Each transition happens on the first date by which more than 50% of the
    reference fields have crossed that transition's NDVI threshold. Fields
    that cross more than once are counted at their first crossing and listed
    in ``diagnostics``.
    """
    traj = np.atleast_2d(np.asarray(trajectories, dtype=np.float64))
    dates = list(dates)
    if traj.shape[0] < 2:
        raise ValueError("need at least 2 reference fields")
    if traj.shape[1] != len(dates):
        raise ValueError(f"trajectory length {traj.shape[1]} != {len(dates)} dates")
    field_ids = list(field_ids) if field_ids is not None else list(range(traj.shape[0]))
    season = season or (dates[0], dates[-1])
    transitions = []
    for th in sorted(thresholds, key=lambda th: th.stage.order):
        res = first_crossings(traj, th)
        when = majority_crossing_date(dates, res.index)
        if diagnostics is not None:
            diagnostics.crossing_share[th.stage.value] = float(np.mean(res.index >= 0))
            diagnostics.multi_crossing_fields[th.stage.value] = [
                field_ids[i] for i in np.flatnonzero(res.multi)]
        if res.multi.any():
            log.info("%d field(s) cross the %s threshold more than once; first crossing used",
                     int(res.multi.sum()), th.stage.value)
        if when is None:
            raise UnresolvedTransitionError(
                th.stage, f"{int((res.index >= 0).sum())}/{len(res.index)} fields crossed")
        transitions.append(when)
    if len(transitions) != 3:
        raise ValueError("exactly three transition thresholds are required")
    windows = windows_from_transitions(district, season[0], season[1], transitions)
    if duration_range is not None:
        problems = windows.check_durations(duration_range)
        if problems:
            raise StageWindowError("; ".join(problems))
    return windows


# ---------------------------------------------------------------------------
# stage composites
# ---------------------------------------------------------------------------

@dataclass
class StageComposite:
    """Mean of the valid observations of one index within one stage window."""

    district: str
    stage: Stage
    index: str
    mean: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.stage = Stage(self.stage)
        self.index = str(self.index)

    def with_mask(self, drop: np.ndarray) -> "StageComposite":
        mean = self.mean.copy()
        count = self.count.copy()
        mean[drop] = np.nan
        count[drop] = 0
        return StageComposite(self.district, self.stage, self.index, mean, count)


def window_date_mask(dates: Sequence[dt.date], windows: StageWindows, stage) -> np.ndarray:
    start, end = windows[stage]
    return np.array([start <= d <= end for d in dates], dtype=bool)


def stage_series(index_cube: IndexCube, windows: StageWindows, stage) -> np.ndarray:
    sel = window_date_mask(index_cube.dates, windows, stage)
    if not sel.any():
        raise EmptyWindowError(stage, *windows[stage])
    return index_cube.values[sel]


def composite_values(series: np.ndarray):
    """Per-pixel mean and count of non-NaN values along axis 0, summed in date order."""
    total = np.zeros(series.shape[1:], dtype=np.float64)
    count = np.zeros(series.shape[1:], dtype=np.int32)
    for plane in series:
        ok = ~np.isnan(plane)
        total += np.where(ok, plane, 0.0)
        count += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return mean, count


def build_stage_composite(index_cube: IndexCube, windows: StageWindows, stage) -> StageComposite:
    mean, count = composite_values(stage_series(index_cube, windows, stage))
    return StageComposite(index_cube.district, Stage(stage), index_cube.index, mean, count)


# ---------------------------------------------------------------------------
# reference profiles CSV
# ---------------------------------------------------------------------------

PROFILE_COLUMNS = ("field_id", "date", "NDVI", "MNDWI", "LSWI", "EVI", "SAVI", "class", "district")


@dataclass
class ReferenceProfiles:
    dates: list[dt.date]
    field_ids: list[str]
    classes: list[str]
    districts: list[str]
    values: dict[str, np.ndarray]   # index -> (fields, dates)

    def select(self, cls: str | None = None, district: str | None = None) -> "ReferenceProfiles":
        keep = [i for i in range(len(self.field_ids))
                if (cls is None or self.classes[i] == cls)
                and (district is None or self.districts[i] == district)]
        return ReferenceProfiles(self.dates, [self.field_ids[i] for i in keep],
                                 [self.classes[i] for i in keep],
                                 [self.districts[i] for i in keep],
                                 {k: v[keep] for k, v in self.values.items()})


def _float_or_nan(s: str) -> float:
    s = s.strip()
    return float(s) if s and s.lower() not in ("nan", "na", "null") else math.nan


def read_reference_profiles(path) -> ReferenceProfiles:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PROFILE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {missing}")
        rows = list(reader)
    dates = sorted({dt.date.fromisoformat(r["date"]) for r in rows})
    fields = sorted({r["field_id"] for r in rows})
    d_idx = {d: i for i, d in enumerate(dates)}
    f_idx = {f: i for i, f in enumerate(fields)}
    indices = PROFILE_COLUMNS[2:7]
    values = {k: np.full((len(fields), len(dates)), np.nan) for k in indices}
    classes = [""] * len(fields)
    districts = [""] * len(fields)
    for r in rows:
        i, j = f_idx[r["field_id"]], d_idx[dt.date.fromisoformat(r["date"])]
        for k in indices:
            values[k][i, j] = _float_or_nan(r[k])
        classes[i] = r["class"]
        districts[i] = r["district"]
    return ReferenceProfiles(dates, fields, classes, districts, values)


def write_reference_profiles(path, profiles: ReferenceProfiles):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_COLUMNS)
        for i, fid in enumerate(profiles.field_ids):
            for j, d in enumerate(profiles.dates):
                w.writerow([fid, d.isoformat()]
                           + [repr(float(profiles.values[k][i, j])) for k in PROFILE_COLUMNS[2:7]]
                           + [profiles.classes[i], profiles.districts[i]])
