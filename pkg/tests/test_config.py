import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phenorice.config import (CalibrationError, DistrictCalibration, RangeBound, RatioCriterion,
                              StageRule, TpaParams, TspParams, load_calibration, save_calibration)
from phenorice.phenology import Stage, windows_from_transitions
from phenorice.synthetic import nalgonda_style_calibration

D0 = dt.date(2018, 11, 15)


def cal():
    w = windows_from_transitions("Nalgonda", D0, D0 + dt.timedelta(days=150),
                                 [D0 + dt.timedelta(days=n) for n in (45, 70, 110)])
    return nalgonda_style_calibration(w)


def test_round_trip(tmp_path):
    c = cal()
    save_calibration(c, tmp_path / "c.json")
    back = load_calibration(tmp_path / "c.json")
    assert back.to_dict() == c.to_dict()
    assert back.digest() == c.digest()
    assert back.windows == c.windows


@pytest.mark.parametrize("path", [(), ("stage_rules", "Vegetative"), ("tpa",), ("season",)])
def test_unknown_keys_rejected(path):
    doc = cal().to_dict()
    node = doc
    for p in path:
        node = node[p]
    node["surprise"] = 1
    with pytest.raises(CalibrationError, match="surprise"):
        DistrictCalibration.from_dict(doc)


def test_description_allowed_and_missing_rule_rejected():
    doc = cal().to_dict()
    doc["description"] = "annotated example"
    assert DistrictCalibration.from_dict(doc).description == "annotated example"
    del doc["stage_rules"]["Reproductive"]
    with pytest.raises(CalibrationError):
        DistrictCalibration.from_dict(doc)


def test_ripening_rule_optional():
    doc = cal().to_dict()
    doc["stage_rules"].pop("Ripening", None)
    assert Stage.Ripening not in DistrictCalibration.from_dict(doc).rules


def test_bad_values():
    with pytest.raises(CalibrationError):
        RangeBound("NDVI", 0.5, 0.2)
    with pytest.raises(CalibrationError):
        TpaParams(0.9, 0.6, 0.15, 0.15)
    with pytest.raises(CalibrationError):
        TspParams({"Vegetative": 0.0})
    with pytest.raises(CalibrationError):
        RatioCriterion("ratio", "NDVI", "LSWI", "within", (1.0,))
    ratio = RatioCriterion("ratio", "NDVI", "LSWI", "<", (2.0,))
    with pytest.raises(CalibrationError):
        StageRule("Vegetative", "basic", (), (ratio,))
    with pytest.raises(CalibrationError):
        StageRule("Vegetative", "ratio_based", (), (ratio,) * 4)


def test_range_bound_inclusive_and_exclusive():
    v = np.array([0.15, 0.3, 0.31, np.nan])
    assert RangeBound("NDVI", 0.15, 0.30).evaluate(v).tolist() == [True, True, False, False]
    assert RangeBound("NDVI", 0.15, None, min_exclusive=True).evaluate(v).tolist() == [
        False, True, True, False]


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_ratio_json_round_trip(a, b, c):
    lo, hi = sorted((a, b))
    for r in (RatioCriterion("difference", "LSWI", "EVI", "within", (lo, hi)),
              RatioCriterion("ratio", "NDVI", "MNDWI", ">", (c,))):
        assert RatioCriterion.from_dict(json.loads(json.dumps(r.to_dict()))) == r
