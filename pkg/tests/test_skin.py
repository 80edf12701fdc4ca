import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import skin_oracle
from shadecal.skin import NoSkinError, is_skin_pixel, mask_mean_rgb, rgb_to_cbcr, rgb_to_hue, skin_mask

SKIN, GREEN = (180, 120, 90), (0, 255, 0)


def test_worked_pixels():
    assert is_skin_pixel(SKIN)
    assert not is_skin_pixel(GREEN)
    assert not is_skin_pixel((120, 120, 120))
    cb, cr = rgb_to_cbcr(np.array(SKIN, float))
    assert cb == pytest.approx(102.9, abs=0.05) and cr == pytest.approx(160.4, abs=0.05)
    assert rgb_to_hue(np.array(SKIN, float)) == pytest.approx(20.0)


def test_hue_boundary_is_strict():
    # (139, 97, 67) has hue exactly 25 degrees
    assert rgb_to_hue(np.array([139.0, 97, 67])) == 25.0
    assert not is_skin_pixel((139, 97, 67))


@given(st.tuples(*[st.integers(0, 255)] * 3))
def test_matches_oracle(px):
    assert is_skin_pixel(px) == skin_oracle(*px)


def test_hue_range():
    px = np.random.default_rng(1).integers(0, 256, (5000, 3)).astype(float)
    h = rgb_to_hue(px)
    assert np.all((h >= 0) & (h < 360))


def test_uniform_images():
    assert skin_mask(np.full((4, 6, 3), SKIN, np.uint8)).all()
    assert not skin_mask(np.full((4, 6, 3), GREEN, np.uint8)).any()


def test_checkerboard_count():
    img = np.empty((5, 7, 3), np.uint8)
    yy, xx = np.mgrid[:5, :7]
    img[(yy + xx) % 2 == 0] = SKIN
    img[(yy + xx) % 2 == 1] = GREEN
    assert skin_mask(img).sum() == 18


def test_mask_is_pixelwise():
    img = np.random.default_rng(2).integers(0, 256, (20, 10, 3)).astype(np.uint8)
    perm = np.random.default_rng(3).permutation(20)
    np.testing.assert_array_equal(skin_mask(img[perm]), skin_mask(img)[perm])


def test_empty_image_rejected():
    with pytest.raises(ValueError):
        skin_mask(np.zeros((0, 4, 3), np.uint8))


def test_mask_mean():
    img = np.zeros((1, 2, 3))
    img[0, 1] = 255
    np.testing.assert_allclose(mask_mean_rgb(img, np.ones((1, 2), bool)), [127.5] * 3)
    with pytest.raises(NoSkinError, match="no skin detected"):
        mask_mean_rgb(img, np.zeros((1, 2), bool))


def test_mask_mean_matches_summation_oracle():
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, (30, 40, 3)).astype(np.uint8)
    mask = rng.random((30, 40)) < 0.3
    acc, n = [0.0, 0.0, 0.0], 0
    for i in range(30):
        for j in range(40):
            if mask[i, j]:
                n += 1
                for c in range(3):
                    acc[c] += float(img[i, j, c])
    np.testing.assert_allclose(mask_mean_rgb(img, mask), [a / n for a in acc], atol=1e-9)
