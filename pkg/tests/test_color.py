import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import lab_oracle
from shadecal.color import (D50, ChannelCurve, GrayBalanceParams, WhitePoint, delta_e76, lab_to_xyz,
                            linearize, xyz_to_lab)

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1.0, 200.0)
lab3 = st.tuples(st.floats(0, 100), st.floats(-100, 100), st.floats(-100, 100))


def test_linearize_examples():
    assert linearize(0.0, ChannelCurve(95.0, 2.2, 3.0)) == 3.0
    assert linearize(127.5, ChannelCurve(1.0, 1.0, 0.0)) == pytest.approx(0.5, abs=1e-15)
    assert linearize(255.0, ChannelCurve(95.69, 2.00, 3.48)) == pytest.approx(99.17, abs=1e-9)


def test_linearize_negative_base_rejected():
    with pytest.raises(ValueError):
        linearize(-1.0, ChannelCurve(1.0, 2.2, 0.0))


@pytest.mark.parametrize("gain,gamma", [(0.0, 2.0), (-1.0, 2.0), (1.0, 0.1), (1.0, 5.5)])
def test_channel_curve_validation(gain, gamma):
    with pytest.raises(ValueError):
        ChannelCurve(gain, gamma, 0.0)


@given(st.floats(0.1, 200), st.floats(0.2, 5.0), st.floats(-10, 10))
def test_linearize_monotone(gain, gamma, offset):
    v = linearize(np.linspace(0, 255, 256), ChannelCurve(gain, gamma, offset))
    assert np.all(np.diff(v) >= 0)


@given(positive, positive, positive)
def test_white_maps_to_100(x, y, z):
    w = WhitePoint(x, y, z)
    np.testing.assert_allclose(xyz_to_lab(w.as_array(), w), [100, 0, 0], atol=1e-9)


def test_black_maps_to_zero():
    np.testing.assert_allclose(xyz_to_lab(np.zeros(3)), [0, 0, 0], atol=1e-12)


@settings(max_examples=200)
@given(st.tuples(finite, finite, finite))
def test_lab_matches_oracle(xyz):
    np.testing.assert_allclose(xyz_to_lab(np.array(xyz)), lab_oracle(xyz), atol=1e-9, rtol=1e-12)


@given(lab3)
def test_lab_round_trip(lab):
    lab = np.array(lab)
    np.testing.assert_allclose(xyz_to_lab(lab_to_xyz(lab)), lab, atol=1e-9)


def test_lab_vectorized_shape():
    xyz = np.random.default_rng(0).uniform(0, 100, (4, 5, 3))
    out = xyz_to_lab(xyz)
    assert out.shape == xyz.shape
    np.testing.assert_allclose(out[2, 3], xyz_to_lab(xyz[2, 3]))


def test_delta_e_golden():
    assert delta_e76(np.array([50.0, 0, 0]), np.array([50.0, 3, 4])) == 5.0
    assert delta_e76(np.array([1.0, 2, 3]), np.array([1.0, 2, 3])) == 0.0


@given(lab3, lab3, lab3)
def test_delta_e_metric(p, q, r):
    p, q, r = map(np.array, (p, q, r))
    assert delta_e76(p, q) == delta_e76(q, p)
    assert delta_e76(p, r) <= delta_e76(p, q) + delta_e76(q, r) + 1e-9


def test_white_point_parse():
    assert WhitePoint.parse("96.42,100,82.52") == D50
    for bad in ("1,2", "a,b,c", "1,-2,3", "0,1,1"):
        with pytest.raises(ValueError):
            WhitePoint.parse(bad)


def test_gray_params_round_trip():
    p = GrayBalanceParams(ChannelCurve(95.69, 2.0, 3.48), ChannelCurve(100.1, 2.1, 3.0),
                          ChannelCurve(98.0, 1.9, 3.37))
    assert GrayBalanceParams.from_dict(p.to_dict()) == p
