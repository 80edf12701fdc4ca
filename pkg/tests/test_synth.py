import numpy as np
import pytest

from shadecal import synth
from shadecal.calibration import DEFAULT_GRAY_IDS, ChannelCurve
from shadecal.color import D50, linearize, xyz_to_lab


def test_identity_camera():
    cam = synth.ForwardCameraModel(np.eye(3), [(1, 1, 0)] * 3)
    device, oog = synth.render_patch(np.array([0.5, 0.5, 0.5]), cam)
    np.testing.assert_allclose(device, [127.5] * 3)
    assert not oog


@pytest.mark.parametrize("seed", range(5))
def test_render_inverts(seed):
    cam = synth.ForwardCameraModel.random(seed)
    refs = synth.default_references()
    xyz = np.array([refs[k] for k in sorted(refs)])
    device, oog = synth.render_patch(xyz, cam)
    assert not oog.any()
    lin = np.column_stack([linearize(device[:, c], cam.encode[c]) for c in range(3)])
    np.testing.assert_allclose(lin @ np.linalg.inv(cam.m).T, xyz, atol=1e-9)


def test_out_of_gamut_flagged():
    cam = synth.ForwardCameraModel.random(0)
    device, oog = synth.render_patch(np.array([[500.0, 500, 500], [-5.0, 0, 0]]), cam)
    assert oog.all()
    assert np.all((device >= 0) & (device <= 255))


def test_noise_is_seeded():
    cam = synth.ForwardCameraModel.random(1, noise_sigma=1.0)
    a = synth.render_patch(np.full((5, 3), 30.0), cam, synth.rng_for(3))[0]
    b = synth.render_patch(np.full((5, 3), 30.0), cam, synth.rng_for(3))[0]
    c = synth.render_patch(np.full((5, 3), 30.0), cam, synth.rng_for(4))[0]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_camera_validation():
    with pytest.raises(ValueError):
        synth.ForwardCameraModel(np.ones((3, 3)), [(1, 1, 0)] * 3)
    with pytest.raises(ValueError):
        synth.ForwardCameraModel(np.eye(3), [(1, 1, 0)] * 3, noise_sigma=-1)
    with pytest.raises(ValueError):
        synth.ForwardCameraModel(np.eye(3), [(1, 6, 0)] * 3)


def test_random_camera_family():
    for seed in range(20):
        cam = synth.ForwardCameraModel.random(seed)
        np.testing.assert_allclose(cam.m @ D50.as_array(), 100)
        assert all(1.8 <= c.gamma <= 2.4 for c in cam.encode)
    assert synth.ForwardCameraModel.from_dict(cam.to_dict()).to_dict() == cam.to_dict()


def test_default_chart_layout():
    refs = synth.default_references()
    assert sorted(refs) == list(range(1, 36))
    ramp = [xyz_to_lab(refs[g]) for g in DEFAULT_GRAY_IDS]
    assert np.all(np.diff([l[0] for l in ramp]) > 0)
    np.testing.assert_allclose([l[1:] for l in ramp], 0, atol=1e-9)
    assert refs[6][1] == pytest.approx(3.0) and refs[17][1] == pytest.approx(95.0)


def test_non_monotone_ramp_rejected():
    refs = synth.default_references()
    refs[6], refs[7] = refs[7], refs[6]
    with pytest.raises(ValueError):
        synth.synth_chart(refs)


def test_rendered_skin_is_detected():
    from shadecal.skin import is_skin_pixel
    # with matched channel gammas the camera is white balanced, so skin reads as skin
    base = synth.ForwardCameraModel.random(0)
    cam = synth.ForwardCameraModel(base.m, [ChannelCurve(c.gain, 2.2, c.offset) for c in base.encode])
    device, _ = synth.render_patch(synth.lab_to_xyz(np.array([45.0, 15, 18])), cam)
    assert is_skin_pixel(np.round(device))


def test_dither_mean():
    img = np.zeros((32, 32, 3), np.uint8)
    synth.dither_fill(img, (0, 0, 32, 32), [100.3, 20.71, 254.99])
    np.testing.assert_allclose(img[8:24, 8:24].reshape(-1, 3).mean(axis=0), [100.3, 20.71, 254.99],
                               atol=1 / 256 + 1e-9)


def test_prediction_dataset():
    rows, mixing, bare, swatch = synth.synth_prediction_dataset(19, 63, noise_sigma=0.0, seed=2)
    assert len(rows) == 63 and len({r.subject_id for r in rows}) == 19
    for r in rows:
        np.testing.assert_allclose(r.target, mixing.weights @ r.input + mixing.bias, atol=1e-12)
        np.testing.assert_array_equal(r.input[:3], bare[r.subject_id])
        np.testing.assert_array_equal(r.input[3:], swatch[r.shade])
    again, *_ = synth.synth_prediction_dataset(19, 63, noise_sigma=0.0, seed=2)
    assert all(np.array_equal(a.target, b.target) for a, b in zip(rows, again))


def test_constant_mixing():
    rows, mixing, *_ = synth.synth_prediction_dataset(5, 10, noise_sigma=0.0, seed=1, constant=True)
    assert all(np.array_equal(r.target, mixing.bias) for r in rows)
