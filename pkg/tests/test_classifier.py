import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from phenorice.classifier import (ExclusionInputs, GridMismatchError, MissingCompositeError, PipelineError,
                                  classify_district, combine_stages, disc_kernel, evaluate_rule,
                                  exclude_landcover, exclude_water, focal_mode, tpa_filter, tsp_filter)
from phenorice.config import RangeBound, RatioCriterion, StageRule, TpaParams
from phenorice.phenology import EmptyWindowError, Stage
from phenorice.raster import BinaryMask, GeoGrid
from phenorice.synthetic import make_district, nalgonda_style_calibration

NALGONDA_TPA = TpaParams(0.60, 0.90, 0.15, 0.15)


def grid(h, w):
    return GeoGrid(0, 0, 10.0, w, h)


def mask(a):
    a = np.asarray(a, np.float32)
    return BinaryMask(grid(*a.shape), a)


# stage rules ---------------------------------------------------------------

def test_land_prep_example():
    rule = StageRule("LandPreparation", "basic", (
        RangeBound("NDVI", 0.15, 0.30), RangeBound("LSWI", 0.10, 0.45),
        RangeBound("MNDWI", 0.0, None, min_exclusive=True)))
    comps = {"NDVI": np.array([0.20]), "LSWI": np.array([0.30]), "MNDWI": np.array([0.05])}
    assert evaluate_rule(comps, rule).tolist() == [1.0]


def test_lswi_evi_example():
    rule = StageRule("Vegetative", "lswi_evi")
    assert evaluate_rule({"LSWI": np.array([0.40, 0.38]), "EVI": np.array([0.44, 0.44])}, rule).tolist() == [1, 0]


def test_reproductive_example():
    rule = StageRule("Reproductive", "basic", (RangeBound("NDVI", 0.45, 0.95),))
    assert evaluate_rule({"NDVI": np.array([0.30])}, rule).tolist() == [0.0]


def test_ratio_zero_denominator_fails():
    rule = StageRule("Vegetative", "ratio_based", (),
                     (RatioCriterion("ratio", "NDVI", "LSWI", "within", (-10.0, 10.0)),))
    assert evaluate_rule({"NDVI": np.array([0.5]), "LSWI": np.array([0.0])}, rule).tolist() == [0.0]


def test_nodata_and_missing_composite():
    rule = StageRule("Reproductive", "basic", (RangeBound("NDVI", 0.45, 0.95), RangeBound("LSWI", 0.0, 1.0)))
    out = evaluate_rule({"NDVI": np.array([0.6, np.nan]), "LSWI": np.array([0.2, 0.2])}, rule)
    assert out[0] == 1 and np.isnan(out[1])
    with pytest.raises(MissingCompositeError):
        evaluate_rule({"NDVI": np.array([0.6])}, rule)


# TSP / TPA -----------------------------------------------------------------

def test_tsp_examples():
    series = np.array([[0.5, 0.2, 0.6, 0.3], [0.5, 0.8, 0.62, np.nan], [0.5, np.nan, 0.58, np.nan]])
    passed, short = tsp_filter(series, 0.15)
    assert passed.tolist() == [True, False, True, True]
    assert short.tolist() == [False, False, False, True]


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (5, 8), elements=st.floats(0, 1)), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_tsp_monotone_in_sigma(series, s1, s2):
    lo, hi = sorted((s1, s2))
    assert not (tsp_filter(series, lo)[0] & ~tsp_filter(series, hi)[0]).any()


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, (4, 6), elements=st.floats(0, 1)))
def test_tsp_std_matches_numpy(series):
    sigma = 0.2
    assert tsp_filter(series, sigma)[0].tolist() == (np.std(series, axis=0) <= sigma).tolist()


def test_tpa_examples():
    ok = tpa_filter([0.18, 0.18, 0.70, np.nan], [0.83, 0.95, 0.70, 0.8], [0.19, 0.19, 0.70, 0.2], NALGONDA_TPA)
    assert ok.tolist() == [True, False, False, False]


def test_tpa_shift_targeted_cases():
    # shift keeps peak inside the bounds: outcome unchanged
    assert tpa_filter(0.18 + 0.05, 0.83 + 0.05, 0.19 + 0.05, NALGONDA_TPA)
    # shift pushes peak above peak_max: now fails
    assert not tpa_filter(0.18 + 0.1, 0.83 + 0.1, 0.19 + 0.1, NALGONDA_TPA)


# combine / exclusions ------------------------------------------------------

def test_combine_truth_table():
    g = grid(1, 1)
    for lp, veg, rep, rip in itertools.product((0, 1), repeat=4):
        masks = {s: BinaryMask(g, np.array([[v]], np.float32))
                 for s, v in zip(Stage, (lp, veg, rep, rip))}
        votes = lp + veg + rep
        expect = {"majority": votes >= 2, "all": votes == 3, "any": votes >= 1}
        for policy, want in expect.items():
            assert combine_stages(masks, policy).values[0, 0] == float(want), (lp, veg, rep, rip, policy)


def test_combine_nodata_and_grid_mismatch():
    a = mask([[np.nan, np.nan]])
    b = mask([[np.nan, 1]])
    out = combine_stages({Stage.LandPreparation: a, Stage.Vegetative: a, Stage.Reproductive: b})
    assert np.isnan(out.values[0, 0]) and out.values[0, 1] == 0
    with pytest.raises(GridMismatchError):
        combine_stages({Stage.LandPreparation: a, Stage.Vegetative: a, Stage.Reproductive: mask([[1]])})


def test_landcover_exclusion():
    m = mask([[1, 1, 0]])
    lc = np.array([[50, 40, 50]], float)
    assert exclude_landcover(m, lc, (50,)).values.tolist() == [[0, 1, 0]]
    assert exclude_landcover(m, lc, ()).values.tolist() == m.values.tolist()
    with pytest.raises(GridMismatchError):
        exclude_landcover(m, np.zeros((2, 2)), (50,))


def test_water_exclusion():
    m = mask([[1, 1, 1]])
    perm = np.array([[1, 0, 0]], float)
    seas = np.array([[0, 1, 0]], float)
    assert exclude_water(m, perm, seas).values.tolist() == [[0, 0, 1]]
    assert exclude_water(m, perm, seas, exclude_seasonal=False).values.tolist() == [[0, 1, 1]]


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.int8, (6, 6), elements=st.integers(0, 2)), hnp.arrays(np.int8, (6, 6), elements=st.integers(0, 1)),
       hnp.arrays(np.int16, (6, 6), elements=st.sampled_from([10, 40, 50, 80])))
def test_exclusions_anti_extensive(m, water, lc):
    vals = np.where(m == 2, np.nan, m).astype(np.float32)
    before = mask(vals)
    after = exclude_landcover(exclude_water(before, water.astype(float)), lc.astype(float), (10, 50))
    assert not ((after.values == 1) & (before.values != 1)).any()
    assert np.array_equal(np.isnan(after.values), np.isnan(before.values))


# focal mode ----------------------------------------------------------------

def test_disc_is_13_pixels():
    assert disc_kernel(20, 10).sum() == 13


def test_isolated_pixel_and_uniform_interior():
    a = np.zeros((9, 9))
    a[4, 4] = 1
    assert focal_mode(mask(a)).values.sum() == 0
    ones = np.ones((9, 9))
    assert focal_mode(mask(ones)).values.tolist() == ones.tolist()


def brute_focal(a, radius_px):
    h, w = a.shape
    out = a.copy()
    for r, c in itertools.product(range(h), range(w)):
        if np.isnan(a[r, c]):
            continue
        votes = [a[i, j] for i, j in itertools.product(range(h), range(w))
                 if (i - r) ** 2 + (j - c) ** 2 <= radius_px ** 2 and not np.isnan(a[i, j])]
        ones, zeros = votes.count(1), votes.count(0)
        if ones != zeros:
            out[r, c] = float(ones > zeros)
    return out


def test_two_by_two_block():
    a = np.zeros((8, 8))
    a[3:5, 3:5] = 1
    out = focal_mode(mask(a)).values
    np.testing.assert_array_equal(out, brute_focal(a, 2))
    # each corner of the block sees 4 ones against 9 zeros in the 13-pixel disc
    assert out.sum() == 0


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.int8, (7, 9), elements=st.integers(0, 2)))
def test_focal_matches_brute_force(m):
    a = np.where(m == 2, np.nan, m).astype(np.float64)
    np.testing.assert_array_equal(focal_mode(mask(a)).values, brute_focal(a, 2))


@settings(max_examples=20, deadline=None)
@given(hnp.arrays(np.int8, (23, 11), elements=st.integers(0, 1)), st.integers(1, 23), st.integers(1, 4))
def test_focal_tiling_invariant(m, n_blocks, threads):
    a = mask(m.astype(np.float32))
    assert focal_mode(a, n_blocks=n_blocks, threads=threads).values.tobytes() == \
        focal_mode(a, n_blocks=1, threads=1).values.tobytes()


def test_focal_radius_below_pixel():
    with pytest.raises(ValueError):
        focal_mode(mask(np.zeros((3, 3))), radius_m=5)


# full pipeline -------------------------------------------------------------

@pytest.fixture(scope="module")
def small_district():
    return make_district("Nalgonda", n_rice=60, n_confounders=60, blocks_per_row=12, seed=3)


@pytest.fixture(scope="module")
def small_result(small_district):
    return classify_district(small_district.cube, nalgonda_style_calibration(small_district.windows))


def test_pipeline_recovers_rice(small_district, small_result):
    final = small_result.final.values == 1
    assert final[small_district.truth].mean() > 0.95
    assert final[~small_district.truth].mean() < 0.02


def test_flat_high_rejected_by_tpa(small_district, small_result):
    flat = small_district.kind == "flat_high"
    assert flat.any()
    assert (small_result.tpa_pass.values[flat] == 0).all()
    assert (small_result.final.values[flat] == 0).all()


def test_audit_and_diagnostics(small_result):
    audit = small_result.audit_masks()
    assert {"combined", "excluded", "final", "tpa_pass", "rule_Ripening"} <= set(audit)
    diag = small_result.diagnostics
    assert diag["exclusions_skipped"] == ["water_permanent", "water_seasonal", "landcover"]
    assert diag["area_ha"]["final"] == small_result.final.count() * 0.01


def test_deterministic_across_partitions(small_district):
    cal = nalgonda_style_calibration(small_district.windows)
    a = classify_district(small_district.cube, cal, threads=1, n_blocks=1)
    b = classify_district(small_district.cube, cal, threads=4, n_blocks=7)
    for k, m in a.audit_masks().items():
        assert m.values.tobytes() == b.audit_masks()[k].values.tobytes(), k


def test_ripening_rule_never_affects_final(small_district, small_result):
    cal = nalgonda_style_calibration(small_district.windows)
    rules = dict(cal.rules)
    rules[Stage.Ripening] = StageRule("Ripening", "basic", (RangeBound("NDVI", 5.0, None),))
    alt = classify_district(small_district.cube, dataclasses.replace(cal, rules=rules))
    assert alt.final.values.tobytes() == small_result.final.values.tobytes()
    rules.pop(Stage.Ripening)
    alt = classify_district(small_district.cube, dataclasses.replace(cal, rules=rules))
    assert alt.final.values.tobytes() == small_result.final.values.tobytes()


def test_exclusions_applied(small_district, small_result):
    water = np.zeros(small_district.cube.grid.shape)
    water[: water.shape[0] // 2] = 1
    cal = nalgonda_style_calibration(small_district.windows)
    res = classify_district(small_district.cube, cal, ExclusionInputs(water_permanent=water))
    assert res.excluded.count() < small_result.excluded.count()
    assert not (res.excluded.values[water == 1] == 1).any()


def test_empty_reproductive_window(small_district):
    cal = nalgonda_style_calibration(small_district.windows)
    cube = small_district.cube
    start, end = cal.windows[Stage.Reproductive]
    keep = [i for i, d in enumerate(cube.dates) if not start <= d <= end]
    cut = cube.replace(dates=[cube.dates[i] for i in keep], values=cube.values[keep])
    with pytest.raises(PipelineError) as exc:
        classify_district(cut, cal)
    assert isinstance(exc.value.cause, EmptyWindowError)
    assert exc.value.cause.stage is Stage.Reproductive
