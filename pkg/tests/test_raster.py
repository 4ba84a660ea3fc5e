import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from phenorice.raster import (BinaryMask, CubeFormatError, GeoGrid, ReflectanceCube, read_cube,
                              read_masks, write_cube, write_masks, write_pgm)

BANDS = ("B2", "B3", "B4", "B8", "B11")
D1, D2 = dt.date(2019, 1, 5), dt.date(2019, 1, 10)


def make_cube(values=None, dates=(D1, D2), bands=BANDS, h=4, w=4):
    grid = GeoGrid(100.0, 200.0, 10.0, w, h, "EPSG:32644")
    if values is None:
        values = np.random.default_rng(0).random((len(dates), len(bands), h, w)).astype(np.float32)
    return ReflectanceCube(grid=grid, dates=list(dates), bands=tuple(bands), values=values, district="Nalgonda")


def test_round_trip_two_dates_five_bands(tmp_path):
    cube = make_cube()
    write_cube(cube, tmp_path / "c")
    back = read_cube(tmp_path / "c")
    assert len(back.dates) == 2 and len(back.bands) == 5
    assert back.grid == cube.grid and back.district == "Nalgonda"
    assert back.values.tobytes() == cube.values.tobytes()


def test_round_trip_preserves_nodata(tmp_path):
    v = make_cube().values.copy()
    v[1, 2, 0, 3] = np.nan
    write_cube(make_cube(v), tmp_path / "c")
    back = read_cube(tmp_path / "c")
    assert np.isnan(back.values[1, 2, 0, 3])
    assert back.values.tobytes() == v.tobytes()


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float32, (1, 5, 3, 2), elements=st.floats(0, 1, width=32) | st.just(np.nan)))
def test_round_trip_is_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("cube")
    write_cube(make_cube(values, dates=(D1,), h=3, w=2), path)
    assert read_cube(path).values.tobytes() == values.tobytes()


def test_plane_size_mismatch(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    (tmp_path / "c" / "2019-01-05_B4.f32").write_bytes(np.zeros(12, "<f4").tobytes())
    with pytest.raises(CubeFormatError, match="expects"):
        read_cube(tmp_path / "c")


def test_missing_plane(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    (tmp_path / "c" / "2019-01-10_B8.f32").unlink()
    with pytest.raises(CubeFormatError, match="missing plane"):
        read_cube(tmp_path / "c")


def _edit_manifest(path, **changes):
    m = json.loads((path / "manifest.json").read_text())
    m.update(changes)
    (path / "manifest.json").write_text(json.dumps(m))


def test_dates_must_increase(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    _edit_manifest(tmp_path / "c", dates=["2019-01-10", "2019-01-05"])
    with pytest.raises(CubeFormatError):
        read_cube(tmp_path / "c")
    with pytest.raises(CubeFormatError):
        make_cube(dates=(D2, D1))


def test_unknown_band(tmp_path):
    write_cube(make_cube(), tmp_path / "c")
    _edit_manifest(tmp_path / "c", bands=["B2", "B3", "B4", "B8", "B12"])
    with pytest.raises(CubeFormatError, match="unknown band"):
        read_cube(tmp_path / "c")


def test_empty_band_list_rejected(tmp_path):
    with pytest.raises(CubeFormatError):
        write_cube(make_cube(np.zeros((2, 0, 4, 4), np.float32), bands=()), tmp_path / "c")


def test_checked_access():
    cube = make_cube()
    assert cube.value(1, "B8", 3, 3) == cube.values[1, 3, 3, 3]
    for args in ((2, "B8", 0, 0), (0, "B8", 4, 0), (0, "B8", 0, -1), (-1, "B8", 0, 0)):
        with pytest.raises(IndexError):
            cube.value(*args)
    with pytest.raises(KeyError):
        cube.band("B5")


def test_grid_invariants():
    with pytest.raises(CubeFormatError):
        GeoGrid(0, 0, 0.0, 2, 2)
    with pytest.raises(CubeFormatError):
        GeoGrid(0, 0, 10.0, 0, 2)
    g = GeoGrid(0, 100, 10.0, 3, 3)
    assert g.pixel_center(0, 0) == (5.0, 95.0)


def test_binary_mask_rejects_other_values():
    g = GeoGrid(0, 0, 10.0, 2, 1)
    with pytest.raises(CubeFormatError):
        BinaryMask(g, np.array([[0.0, 0.5]], np.float32))
    m = BinaryMask(g, np.array([[1.0, np.nan]], np.float32))
    assert m.count() == 1 and m.nodata.tolist() == [[False, True]]


def test_masks_and_pgm(tmp_path):
    g = GeoGrid(0, 0, 10.0, 3, 2)
    m = BinaryMask(g, np.array([[1, 0, np.nan], [0, 1, 1]], np.float32))
    write_masks(tmp_path / "m", {"final": m}, D1, "Nalgonda")
    district, back = read_masks(tmp_path / "m")
    assert district == "Nalgonda"
    assert back["final"].values.tobytes() == m.values.tobytes()
    write_pgm(m, tmp_path / "m.pgm")
    raw = (tmp_path / "m.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n255\n")
    assert list(raw[-6:]) == [255, 0, 128, 0, 255, 255]
