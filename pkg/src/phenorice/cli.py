"""Command-line entry point: preprocess, calibrate, classify, validate."""
from __future__ import annotations

import argparse
import glob
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .calibration import (DistrictInputs, fit_cluster, optimize_district, read_clusters,
                          read_reference_polygons, windows_from_references, write_ledger,
                          compare_modes)
from .classifier import ExclusionInputs, PipelineError, classify_district
from .config import CalibrationError, load_calibration, save_calibration
from .districts import UnknownDistrictError, normalize_district_name
from .indices import IndexKind, compute_indices
from .parallel import worker_count
from .phenology import STAGES, EmptyWindowError, StageWindowError, UnresolvedTransitionError
from .preprocess import preprocess_cube, read_qa
from .raster import CubeFormatError, read_cube, read_masks, read_plane, write_cube, write_masks, write_pgm
from .validation import (Allocation, ValidationError, area_from_mask, area_stats, build_report,
                         confusion, official_series, read_official, stratify_samples, write_report)

log = logging.getLogger("phenorice.cli")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
MANIFEST_NAME = "run_manifest.json"
VOLATILE_KEYS = ("timestamps", "timings_s")


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------

def digest_path(path) -> str:
    """sha256 over a file, or over the sorted relative names and contents of a directory."""
    p = Path(path)
    h = hashlib.sha256()
    if p.is_dir():
        for f in sorted(q for q in p.rglob("*") if q.is_file()):
            if f.name == MANIFEST_NAME:
                continue
            h.update(f.relative_to(p).as_posix().encode() + b"\0")
            h.update(f.read_bytes())
    else:
        h.update(p.read_bytes())
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, args: dict, seed: int | None = None):
        self.doc = {"tool": "phenorice", "version": __version__, "command": command,
                    "args": args, "seed": seed, "inputs": {}, "calibration_digest": None,
                    "outputs": {}, "timestamps": {"started": _now()}, "timings_s": {}}
        self._t0 = time.perf_counter()
        self._last = self._t0

    def add_input(self, name: str, path):
        if path is not None:
            self.doc["inputs"][name] = {"path": str(path), "sha256": digest_path(path)}

    def lap(self, stage: str):
        now = time.perf_counter()
        self.doc["timings_s"][stage] = round(now - self._last, 6)
        self._last = now

    def write(self, out_dir, outputs, name: str = MANIFEST_NAME) -> Path:
        out_dir = Path(out_dir)
        self.doc["outputs"] = {str(Path(o).relative_to(out_dir).as_posix()): digest_path(o)
                               for o in sorted(map(Path, outputs))}
        self.doc["timestamps"]["finished"] = _now()
        self.doc["timings_s"]["total"] = round(time.perf_counter() - self._t0, 6)
        path = out_dir / name
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def verify_manifest(path) -> list[str]:
    """Output entries whose recomputed digest differs from the recorded one."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return [rel for rel, d in doc["outputs"].items() if digest_path(path.parent / rel) != d]


def stable_manifest(doc: dict) -> dict:
    """Manifest content without timestamps and timings (what reproducibility compares)."""
    return {k: v for k, v in doc.items() if k not in VOLATILE_KEYS}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _require_dir(path, flag):
    if path is None or not Path(path).is_dir():
        raise InputError(f"{flag}: directory not found: {path}")


def _require_file(path, flag):
    if path is None or not Path(path).is_file():
        raise InputError(f"{flag}: file not found: {path}")


def cmd_preprocess(a) -> int:
    _require_dir(a.cube, "--cube")
    _require_dir(a.qa, "--qa")
    man = RunManifest("preprocess", {"scale": a.scale, "max_cloud": a.max_cloud})
    man.add_input("cube", a.cube)
    man.add_input("qa", a.qa)
    cube = read_cube(a.cube)
    qa = read_qa(a.qa)
    man.lap("read")
    cleaned, report = preprocess_cube(cube, qa, scale=a.scale, max_cloud_fraction=a.max_cloud)
    man.lap("preprocess")
    out = Path(a.out)
    write_cube(cleaned, out)
    rep = out / "preprocess_report.json"
    with open(rep, "w", encoding="utf-8") as fh:
        json.dump(asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    man.write(out, [p for p in out.iterdir() if p.name != MANIFEST_NAME])
    log.info("kept %d of %d dates", len(cleaned.dates), len(cube.dates))
    return EXIT_OK


def _district_inputs(cube_dir, polygons, district):
    cube = read_cube(cube_dir)
    if cube.district and normalize_district_name(cube.district) != district:
        raise InputError(f"cube {cube_dir} is for {cube.district!r}, not {district!r}")
    cubes = compute_indices(cube)
    if IndexKind.NDVI not in cubes:
        raise InputError(f"cube {cube_dir} lacks the bands for NDVI")
    windows = windows_from_references(polygons, cubes[IndexKind.NDVI], district)
    return DistrictInputs(polygons, cubes, windows)


def cmd_calibrate(a) -> int:
    _require_file(a.refs, "--refs")
    district = normalize_district_name(a.district)
    polygons = read_reference_polygons(a.refs, normalize=normalize_district_name)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    man = RunManifest("calibrate", {"district": district, "mode": a.mode})
    man.add_input("refs", a.refs)
    man.add_input("cube", a.cube)
    outputs = [out]
    ledger_path = out.with_name(out.stem + ".ledger.csv")
    if a.mode == "district":
        _require_dir(a.cube, "--cube")
        own = [p for p in polygons if p.district == district]
        if not own:
            raise InputError(f"no reference polygons for {district}")
        inputs = _district_inputs(a.cube, own, district)
        man.lap("windows")
        cal, ledger = optimize_district(own, inputs.index_cubes, inputs.windows, district)
    else:
        _require_file(a.clusters, "--clusters")
        _require_dir(a.cube, "--cube")
        man.add_input("clusters", a.clusters)
        clusters = {c: [normalize_district_name(d) for d in ms] for c, ms in read_clusters(a.clusters).items()}
        home = [c for c, ms in clusters.items() if district in ms]
        if not home:
            raise InputError(f"{district} is not in any cluster of {a.clusters}")
        inputs = {}
        for sub in sorted(p for p in Path(a.cube).iterdir() if (p / "manifest.json").is_file()):
            name = normalize_district_name(json.loads((sub / "manifest.json").read_text())["district"])
            own = [p for p in polygons if p.district == name]
            if own:
                inputs[name] = _district_inputs(sub, own, name)
        for c, ms in clusters.items():
            missing = [d for d in ms if d not in inputs]
            if missing:
                raise InputError(f"cluster {c}: no cube or references for {missing}")
        man.lap("windows")
        cal, ledger, _ = fit_cluster(home[0], clusters[home[0]], inputs)
        comparison = compare_modes(inputs, clusters)
        comp_path = out.with_name(out.stem + ".comparison.json")
        with open(comp_path, "w", encoding="utf-8") as fh:
            json.dump(comparison.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        cl_path = out.with_name(out.stem + ".clusters.json")
        with open(cl_path, "w", encoding="utf-8") as fh:
            json.dump({c: comparison.calibrations[c].to_dict() for c in sorted(clusters)}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        outputs += [comp_path, cl_path]
    man.lap("optimize")
    save_calibration(cal, out)
    write_ledger(ledger_path, ledger)
    outputs.append(ledger_path)
    man.doc["calibration_digest"] = cal.digest()
    man.write(out.parent, outputs, name=out.stem + "." + MANIFEST_NAME)
    if cal.needs_manual_review:
        log.warning("%s flagged for manual review", cal.district)
    return EXIT_OK


def _matches(cal, cube_district: str) -> bool:
    names = {normalize_district_name(cal.district)} if not cal.cluster else set()
    if cal.cluster:
        names = {normalize_district_name(d) for d in cal.cluster.get("members", [])}
    return normalize_district_name(cube_district) in names


def cmd_classify(a) -> int:
    _require_dir(a.cube, "--cube")
    _require_file(a.calib, "--calib")
    man = RunManifest("classify", {})
    for name, p in (("cube", a.cube), ("calibration", a.calib), ("landcover", a.landcover),
                    ("water_permanent", a.water_perm), ("water_seasonal", a.water_seas)):
        if p is not None and name in ("landcover", "water_permanent", "water_seasonal"):
            _require_file(p, "--" + name.replace("_permanent", "-perm").replace("_seasonal", "-seas"))
        man.add_input(name, p)
    cal = load_calibration(a.calib)
    cube = read_cube(a.cube)
    if not _matches(cal, cube.district):
        raise InputError(f"calibration is for {cal.district!r} but cube is {cube.district!r}")
    man.doc["calibration_digest"] = cal.digest()
    ex = ExclusionInputs(*(read_plane(p, cube.grid) if p else None
                           for p in (a.landcover, a.water_perm, a.water_seas)))
    man.lap("read")
    result = classify_district(cube, cal, ex, threads=worker_count())
    man.lap("classify")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    masks = {s.value: result.stage_masks[s] for s in STAGES if s in result.stage_masks}
    masks["final"] = result.final
    write_masks(out / "masks", masks, cal.season[0], district=cube.district)
    audit = {k: v for k, v in result.audit_masks().items() if k != "final"}
    write_masks(out / "audit", audit, cal.season[0], district=cube.district)
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(result.diagnostics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_pgm(result.final, out / "final_mask.pgm")
    man.write(out, [out / "masks", out / "audit", out / "diagnostics.json", out / "final_mask.pgm"])
    log.info("%s: final paddy area %.2f ha", cube.district, result.diagnostics["area_ha"]["final"])
    return EXIT_OK


def _mask_dirs(pattern: str) -> list[Path]:
    dirs = []
    for m in sorted(glob.glob(pattern)):
        p = Path(m)
        if (p / "masks" / "manifest.json").is_file():
            p = p / "masks"
        if (p / "manifest.json").is_file():
            dirs.append(p)
    return dirs


def cmd_validate(a) -> int:
    _require_file(a.refs, "--refs")
    _require_file(a.official, "--official")
    dirs = _mask_dirs(a.masks)
    if not dirs:
        raise InputError(f"--masks: no mask directories match {a.masks!r}")
    man = RunManifest("validate", {"masks": a.masks}, seed=a.seed)
    for d in dirs:
        man.add_input(f"masks:{d}", d)
    man.add_input("refs", a.refs)
    man.add_input("official", a.official)
    official = read_official(a.official)
    masks = {}
    for d in dirs:
        district, named = read_masks(d)
        if "final" not in named:
            raise InputError(f"{d}: no 'final' mask band")
        name = normalize_district_name(district)
        if name in masks:
            raise InputError(f"two mask directories for {name}")
        masks[name] = named["final"]
    polygons = read_reference_polygons(a.refs, normalize=normalize_district_name)
    man.lap("read")
    points = stratify_samples(polygons, masks, Allocation(), seed=a.seed)
    cms = confusion(points)
    areas = {d: area_from_mask(m) for d, m in masks.items()}
    des = official_series(official, "DES") or official_series(official, "TDA")
    matched = sorted(set(areas) & set(des))
    stats = area_stats({d: areas[d] for d in matched}, {d: des[d] for d in matched}) if len(matched) >= 3 else None
    official_total = sum(des[d] for d in sorted(des)) if set(areas) <= set(des) and des else None
    meta = {"seed": a.seed, "unmatched_mapped": sorted(set(areas) - set(des)),
            "unmatched_official": sorted(set(des) - set(areas))}
    report = build_report(cms, areas, stats, official_total, meta)
    man.lap("validate")
    out = Path(a.out)
    write_report(report, out, points)
    man.write(out, [p for p in out.iterdir() if p.name != MANIFEST_NAME])
    log.info("state area %.1f ha over %d district(s)", report["state"]["area_ha"], len(areas))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phenorice", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="cloud screening, scaling and outlier removal")
    s.add_argument("--cube", required=True)
    s.add_argument("--qa", required=True)
    s.add_argument("--scale", type=float, default=10000.0)
    s.add_argument("--max-cloud", type=float, default=0.8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("calibrate", help="fit a district (or cluster) calibration")
    s.add_argument("--cube", required=True)
    s.add_argument("--refs", required=True)
    s.add_argument("--district", required=True)
    s.add_argument("--mode", choices=("district", "cluster"), default="district")
    s.add_argument("--clusters")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("classify", help="produce stage and final paddy masks")
    s.add_argument("--cube", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--landcover")
    s.add_argument("--water-perm")
    s.add_argument("--water-seas")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("validate", help="accuracy assessment and area reconciliation")
    s.add_argument("--masks", required=True)
    s.add_argument("--refs", required=True)
    s.add_argument("--official", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_validate)
    return p


INPUT_ERRORS = (InputError, CubeFormatError, CalibrationError, ValidationError, UnknownDistrictError,
                EmptyWindowError, StageWindowError, UnresolvedTransitionError, FileNotFoundError,
                json.JSONDecodeError)


def _configure_logging():
    root = logging.getLogger("phenorice")
    if not any(getattr(h, "_phenorice", False) for h in root.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(asctime)s %(name)s %(message)s"))
        h._phenorice = True
        root.addHandler(h)
    root.setLevel(logging.INFO)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return a.func(a)
    except PipelineError as exc:
        code = EXIT_INPUT if isinstance(exc.cause, INPUT_ERRORS) else EXIT_INTERNAL
        log.error("%s", exc)
        return code
    except INPUT_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
