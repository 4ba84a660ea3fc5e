import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from phenorice.calibration import ReferencePolygon
from phenorice.districts import UnknownDistrictError
from phenorice.raster import BinaryMask, GeoGrid
from phenorice.validation import (Allocation, ConfusionMatrix, FieldSizeCategory, ValidationError,
                                  ValidationPoint, area_from_mask, area_stats, build_report, confusion,
                                  largest_remainder, metrics, read_official, stratify_samples,
                                  stratum_counts, write_report)

TABLE6 = {"Nalgonda": (86_574, 86_191), "Suryapet": (85_754, 82_472), "Nizamabad": (64_486, 67_088),
          "Khammam": (33_614, 31_843), "Karimnagar": (46_820, 48_707)}


# categories ----------------------------------------------------------------

@pytest.mark.parametrize("area, cat", [(0.0, "TINY"), (0.1999, "TINY"), (0.2, "SMALL"), (0.8, "MEDIUM"),
                                       (3.99, "MEDIUM"), (4.0, "LARGE"), (250.0, "LARGE")])
def test_categories_lower_inclusive(area, cat):
    assert FieldSizeCategory.of(area).name == cat


@given(st.floats(0, 1e6))
def test_categories_partition(area):
    hits = [c for c in FieldSizeCategory if c.low <= area < c.high]
    assert hits == [FieldSizeCategory.of(area)]


# metrics -------------------------------------------------------------------

def test_perfect():
    m = metrics(ConfusionMatrix(tp=30, fp=0, fn=0, tn=70))
    assert (m.overall_accuracy, m.kappa, m.f1) == (1.0, 1.0, 1.0)
    assert m.margin_of_error == 0.0


def test_hand_example():
    m = metrics(ConfusionMatrix(tp=40, fp=5, fn=10, tn=45))
    assert m.overall_accuracy == pytest.approx(0.85)
    assert m.kappa == pytest.approx(0.70)
    assert m.producer_accuracy == pytest.approx(0.8)
    assert m.user_accuracy == pytest.approx(40 / 45)
    assert m.balanced_accuracy == pytest.approx((0.8 + 0.9) / 2)
    assert m.margin_of_error == pytest.approx(1.96 * math.sqrt(0.85 * 0.15 / 100))


def test_nalgonda_f1():
    # PA 85.8 and UA 99.1 from the appendix row; F1 printed as 0.920
    pa, ua = 0.858, 0.991
    m = metrics(ConfusionMatrix(tp=1, fp=1 / ua - 1, fn=1 / pa - 1, tn=1))
    assert round(m.f1, 3) == 0.920


def test_undefined_markers():
    m = metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=10))
    assert m.producer_accuracy is None and m.user_accuracy is None and m.f1 is None
    assert m.kappa is None and m.overall_accuracy == 1.0
    with pytest.raises(ValidationError):
        metrics(ConfusionMatrix())
    with pytest.raises(ValueError):
        ConfusionMatrix(tp=-1)


counts = st.integers(0, 500)


@settings(max_examples=200)
@given(counts, counts, counts, counts)
def test_metric_invariants(tp, fp, fn, tn):
    if tp + fp + fn + tn == 0:
        return
    m = metrics(ConfusionMatrix(tp, fp, fn, tn))
    for v in (m.overall_accuracy, m.balanced_accuracy, m.f1, m.producer_accuracy, m.user_accuracy):
        assert v is None or 0 <= v <= 1
    if m.kappa is not None:
        assert -1 - 1e-12 <= m.kappa <= 1 + 1e-12
    if m.producer_accuracy and m.user_accuracy:
        assert m.f1 == pytest.approx(sps.hmean([m.producer_accuracy, m.user_accuracy]))
    both_classes = (tp + fn) > 0 and (fp + tn) > 0
    if both_classes and m.kappa is not None:
        assert (m.kappa == pytest.approx(1.0)) == (fp == 0 and fn == 0)


# area ----------------------------------------------------------------------

def test_area_examples():
    g = GeoGrid(0, 0, 10.0, 10, 10)
    assert area_from_mask(BinaryMask(g, np.ones((10, 10), np.float32))) == 1.0
    assert area_from_mask(BinaryMask(g, np.zeros((10, 10), np.float32))) == 0.0
    assert area_from_mask(BinaryMask(g, np.ones((10, 10), np.float32)), pixel_size_m=20.0) == 4.0


def test_area_of_large_mask():
    g = GeoGrid(0, 0, 10.0, 8_657_400 // 600, 600)
    m = BinaryMask(g, np.ones((600, 8_657_400 // 600), np.float32))
    assert area_from_mask(m) == 86_574.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.booleans(), min_size=4, max_size=40))
def test_area_additive_over_disjoint_masks(bits):
    a = np.array(bits, np.float32).reshape(1, -1)
    b = 1 - a
    g = GeoGrid(0, 0, 10.0, a.shape[1], 1)
    total = area_from_mask(BinaryMask(g, np.ones_like(a)))
    assert area_from_mask(BinaryMask(g, a)) + area_from_mask(BinaryMask(g, b)) == pytest.approx(total)


# area_stats ----------------------------------------------------------------

def test_nalgonda_diff():
    stats = area_stats({k: v[0] for k, v in TABLE6.items()}, {k: v[1] for k, v in TABLE6.items()})
    assert stats.diff_percent["Nalgonda"] == pytest.approx(100 * 383 / 86_191)
    assert round(stats.diff_percent["Nalgonda"], 1) == 0.4


def test_identical_vectors():
    v = {k: o for k, (_, o) in TABLE6.items()}
    s = area_stats(v, v)
    assert (s.r2, s.rmse_ha, s.bias_ha, s.mae_ha) == (1.0, 0.0, 0.0, 0.0)


def test_table6_against_regression_oracle():
    names = sorted(TABLE6)
    m = np.array([TABLE6[n][0] for n in names], float)
    o = np.array([TABLE6[n][1] for n in names], float)
    fit = sps.linregress(o, m)
    s = area_stats({n: TABLE6[n][0] for n in names}, {n: TABLE6[n][1] for n in names})
    assert s.slope == pytest.approx(fit.slope, rel=1e-12)
    assert s.intercept == pytest.approx(fit.intercept, rel=1e-9)
    assert s.pearson_r == pytest.approx(fit.rvalue, rel=1e-12)
    assert s.r2 == pytest.approx(fit.rvalue ** 2, rel=1e-12)
    assert s.rmse_ha == pytest.approx(np.sqrt(np.mean((m - o) ** 2)))
    assert s.mae_ha == pytest.approx(np.mean(np.abs(m - o)))
    assert s.rmse_ha >= s.mae_ha >= 0 and s.r2 <= 1


@settings(max_examples=30)
@given(st.permutations(sorted(TABLE6)))
def test_reorder_invariant(order):
    base = area_stats({k: v[0] for k, v in TABLE6.items()}, {k: v[1] for k, v in TABLE6.items()})
    s = area_stats({k: TABLE6[k][0] for k in order}, {k: TABLE6[k][1] for k in reversed(order)})
    assert s == base


def test_swap_negates_bias():
    a = area_stats({k: v[0] for k, v in TABLE6.items()}, {k: v[1] for k, v in TABLE6.items()})
    b = area_stats({k: v[1] for k, v in TABLE6.items()}, {k: v[0] for k, v in TABLE6.items()})
    assert b.bias_ha == pytest.approx(-a.bias_ha)


def test_name_matching():
    mapped = {"Jagitial": 10.0, "Nalgonda": 20.0, "Khammam": 30.0}
    official = {"Jagtial": 11.0, "nalgonda": 19.0, "KHAMMAM": 31.0}
    assert area_stats(mapped, official).n == 3
    with pytest.raises(UnknownDistrictError) as exc:
        area_stats({**mapped, "Atlantis": 1.0}, official)
    assert exc.value.names == ["Atlantis"]
    with pytest.raises(UnknownDistrictError):
        area_stats({**mapped, "Suryapet": 1.0}, official)
    with pytest.raises(ValidationError):
        area_stats({"Nalgonda": 1.0}, {"Nalgonda": 1.0})


def test_read_official(tmp_path):
    p = tmp_path / "o.csv"
    p.write_text("district,official_ha,source\nJagitial,100,DES\nJagtial,90,TDA\n")
    assert read_official(p) == {"Jagtial": {"DES": 100.0, "TDA": 90.0}}
    p.write_text("district,official_ha,source\nNalgonda,1,FAO\n")
    with pytest.raises(ValidationError):
        read_official(p)
    p.write_text("district,official_ha,source\nAtlantis,1,DES\n")
    with pytest.raises(UnknownDistrictError):
        read_official(p)


# sampling ------------------------------------------------------------------

def test_largest_remainder():
    assert largest_remainder(200, [1, 1]) == [100, 100]
    assert largest_remainder(10, [1, 1, 1]) == [4, 3, 3]
    assert sum(largest_remainder(200, [0.3, 1.7, 5.1, 2.2])) == 200


@given(st.integers(1, 500), st.lists(st.floats(0.01, 100), min_size=1, max_size=8))
def test_largest_remainder_sums(total, weights):
    out = largest_remainder(total, weights)
    assert sum(out) == total
    exact = [total * w / sum(weights) for w in weights]
    assert all(abs(a - e) < 1 for a, e in zip(out, exact))


def test_equal_strata_and_upweight():
    tiny, small = FieldSizeCategory.TINY, FieldSizeCategory.SMALL
    areas = {(tiny, False): 5.0, (small, False): 5.0}
    assert stratum_counts(areas, Allocation(200, 1.0)) == {(tiny, False): 100, (small, False): 100}
    areas = {(tiny, True): 5.0, (tiny, False): 5.0}
    base = stratum_counts(areas, Allocation(200, 1.0))
    doubled = stratum_counts(areas, Allocation(200, 2.0))
    assert doubled[(tiny, True)] == 2 * base[(tiny, True)]
    assert doubled[(tiny, False)] == base[(tiny, False)]


def field_set():
    g = GeoGrid(0, 0, 10.0, 40, 40)
    polys = []
    for i in range(16):
        r, c = divmod(i, 4)
        px = tuple((10 * r + a, 10 * c + b) for a in range(5) for b in range(5))
        polys.append(ReferencePolygon(f"f{i}", "Nalgonda", "paddy" if i % 2 else "non_paddy", 0.25, pixels=px))
    vals = np.zeros((40, 40), np.float32)
    vals[:20] = 1
    return polys, {"Nalgonda": BinaryMask(g, vals)}


def test_stratify_seeded_and_labelled():
    polys, masks = field_set()
    a = stratify_samples(polys, masks, Allocation(40, 1.5), seed=11)
    b = stratify_samples(polys, masks, Allocation(40, 1.5), seed=11)
    c = stratify_samples(polys, masks, Allocation(40, 1.5), seed=12)
    assert a == b and a != c
    assert sum(p.truth for p in a) == 30 and sum(not p.truth for p in a) == 20
    for p in a:
        assert p.predicted == bool(masks["Nalgonda"].values[p.row, p.col] == 1)
        assert p.category is FieldSizeCategory.SMALL
    assert len({(p.row, p.col) for p in a}) == len(a)


def test_stratify_skips_districts_without_mask():
    polys, _ = field_set()
    assert stratify_samples(polys, {}, seed=0) == []


def test_confusion_tally():
    cat = FieldSizeCategory.TINY
    pairs = [(1, 1), (1, 1), (1, 0), (0, 0), (0, 0), (0, 0), (0, 1), (1, 1), (0, 0), (1, 0)]
    pts = [ValidationPoint("Nalgonda", "x", i, 0, 0, 0, bool(t), bool(p), cat) for i, (t, p) in enumerate(pairs)]
    cm = confusion(pts)[("Nalgonda", cat)]
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (3, 1, 2, 4)
    assert cm.total == len(pts)
    right = confusion([p for p in pts if p.truth == p.predicted])[("Nalgonda", cat)]
    assert right.fp == right.fn == 0
    with pytest.raises(ValidationError):
        confusion([ValidationPoint("Nalgonda", "x", 0, 0, 0, 0, None, True, cat)])


# report --------------------------------------------------------------------

def test_report_structure_and_rollup(tmp_path):
    names = [f"D{i:02d}" for i in range(32)]
    areas = {n: 1000.0 + i for i, n in enumerate(names)}
    cms = {(n, FieldSizeCategory.SMALL): ConfusionMatrix(8, 1, 1, 10) for n in names}
    rep = build_report(cms, areas, official_total=40_000.0)
    assert len(rep["districts"]) == 32 and rep["state"]["districts"] == 32
    assert rep["state"]["area_ha"] == sum(areas.values())
    assert rep["state"]["points"] == 32 * 20
    assert rep["state"]["diff_percent"] == round(100 * (sum(areas.values()) - 40_000) / 40_000, 4)
    assert build_report(cms, areas) == build_report(dict(reversed(list(cms.items()))), areas)
    write_report(rep, tmp_path)
    assert json.loads((tmp_path / "report.json").read_text()) == rep
    with open(tmp_path / "accuracy.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["district", "oa", "kappa", "f1", "pa", "ua", "area_ha", "points", "moe"]
    assert len(rows) == 33


def test_appendix_area_replay(data_dir):
    with open(data_dir / "appendix_a.csv") as fh:
        areas = {r["district"]: float(r["area_ha"]) for r in csv.DictReader(fh)}
    assert build_report(None, areas)["state"]["area_ha"] == 732_345
