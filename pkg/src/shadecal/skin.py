"""Rule-based skin pixel classification (RGB, hue and CbCr thresholds)."""
import numpy as np


class NoSkinError(ValueError):
    """Raised when a mask selects no pixels."""


def rgb_to_cbcr(rgb):
    """Full-range BT.601 chroma, centered on 128."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return cb, cr


def rgb_to_hue(rgb):
    """Hexagonal HSV hue in degrees, in [0, 360). Achromatic pixels get 0."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        mx == r,
        ((g - b) / safe) % 6.0,
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, 60.0 * h, 0.0)
    return np.where(h >= 360.0, h - 360.0, h)


def skin_rule(rgb):
    """Vectorized skin test over an ``(..., 3)`` array of device RGB values."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    spread = rgb.max(axis=-1) - rgb.min(axis=-1)
    crit1 = (
        (r > 95) & (g > 40) & (b > 20)
        & (spread > 15)
        & (np.abs(r - g) > 15) & (r > g) & (r > b)
    )
    cb, cr = rgb_to_cbcr(rgb)
    crit2 = (
        (cr <= 1.5862 * cb + 20)
        & (cr >= 0.3448 * cb + 76.2069)
        & (cr >= -4.5652 * cb + 234.5652)
        & (cr <= -1.15 * cb + 301.75)
        & (cr <= -2.2857 * cb + 432.85)
    )
    h = rgb_to_hue(rgb)
    crit3 = (h < 25) | (h > 230)
    return crit1 & crit2 & crit3


def is_skin_pixel(rgb):
    return bool(skin_rule(np.asarray(rgb, dtype=np.float64).reshape(3)))


def skin_mask(img):
    """Boolean ``(H, W)`` mask of skin pixels; no morphological cleanup."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError(f"expected a nonempty (H, W, 3) image, got shape {img.shape}")
    return skin_rule(img)


def mask_mean_rgb(img, mask):
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if not mask.any():
        raise NoSkinError("no skin detected")
    return img[mask].mean(axis=0)
