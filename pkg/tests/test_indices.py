import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phenorice.indices import IndexKind, align_to_coarsest, compute_index, compute_indices, index_from_bands
from phenorice.raster import GeoGrid, ReflectanceCube

BANDS = ("B2", "B3", "B4", "B8", "B11")


def one_pixel(**b):
    vals = np.array([b.get(k, 0.1) for k in BANDS], np.float32).reshape(1, 5, 1, 1)
    return ReflectanceCube(grid=GeoGrid(0, 0, 10.0, 1, 1), dates=[dt.date(2019, 1, 1)],
                           bands=BANDS, values=vals)


def val(kind, **b):
    return compute_index(one_pixel(**b), kind).values[0, 0, 0]


@pytest.mark.parametrize("kind, bands, expected", [
    ("NDVI", dict(B8=0.3, B4=0.3), 0.0),
    ("NDVI", dict(B8=0.5, B4=0.1), 0.666667),
    ("EVI", dict(B8=0.5, B4=0.1, B2=0.05), 0.579710),
    ("SAVI", dict(B8=0.5, B4=0.1), 0.545455),
    ("MNDWI", dict(B3=0.2, B11=0.2), 0.0),
])
def test_examples(kind, bands, expected):
    # float32 storage of the inputs limits agreement to ~1e-7
    assert val(kind, **bands) == pytest.approx(expected, abs=1e-6)


def test_zero_denominator_is_nodata():
    assert np.isnan(val("NDVI", B8=0.0, B4=0.0))
    assert np.isnan(index_from_bands("LSWI", {"B8": np.array(1e-10), "B11": np.array(-1e-10 + 1e-12)}))


def test_nodata_propagates():
    assert np.isnan(val("NDVI", B8=np.nan, B4=0.1))
    assert not np.isnan(val("MNDWI", B8=np.nan, B3=0.2, B11=0.1))


def test_missing_band():
    cube = one_pixel().select_bands(["B4", "B8"])
    with pytest.raises(KeyError, match="B11"):
        compute_index(cube, "LSWI")
    assert set(compute_indices(cube)) == {IndexKind.NDVI, IndexKind.SAVI}


unit = st.floats(0.0, 1.0, allow_nan=False)


@given(unit, unit, unit)
def test_normalized_difference_range(a, b, c):
    for kind, bands in (("NDVI", {"B8": a, "B4": b}), ("MNDWI", {"B3": a, "B11": c}),
                        ("LSWI", {"B8": a, "B11": c})):
        v = index_from_bands(kind, {k: np.float64(x) for k, x in bands.items()})
        assert np.isnan(v) or -1.0 <= v <= 1.0


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.1, 10.0))
def test_ndvi_scale_invariant(b8, b4, s):
    a = index_from_bands("NDVI", {"B8": np.float64(b8), "B4": np.float64(b4)})
    b = index_from_bands("NDVI", {"B8": np.float64(b8 * s), "B4": np.float64(b4 * s)})
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_evi_savi_not_scale_invariant():
    b = {"B8": np.float64(0.5), "B4": np.float64(0.1), "B2": np.float64(0.05)}
    b2 = {k: v * 2 for k, v in b.items()}
    for kind in ("EVI", "SAVI"):
        assert index_from_bands(kind, b) != pytest.approx(index_from_bands(kind, b2), rel=1e-3)


def test_align_to_coarsest():
    cube = one_pixel().replace(native_resolution={"B2": 10.0, "B3": 10.0, "B4": 10.0, "B8": 10.0, "B11": 20.0})
    assert align_to_coarsest(cube, "MNDWI").resolution_m == 20.0
    assert align_to_coarsest(cube, "LSWI").resolution_m == 20.0
    assert align_to_coarsest(cube, "NDVI").resolution_m == 10.0
    flat = cube.replace(native_resolution={b: 10.0 for b in BANDS})
    assert {align_to_coarsest(flat, k).resolution_m for k in IndexKind} == {10.0}
