"""Synthetic cameras, charts and prediction datasets with known ground truth.

Every random draw comes from numpy's ``PCG64`` bit generator seeded
explicitly, so outputs are reproducible across platforms.
"""
from dataclasses import dataclass, field

import numpy as np

from .calibration import DEFAULT_GRAY_IDS, PatchObservation
from .color import D50, ChannelCurve, lab_to_xyz, xyz_to_lab
from .dataset import SampleRow

RNG_NAME = "numpy.random.PCG64"

# Chromatic chart entries as D50 L*a*b*: the 18 chromatic ColorChecker
# patches followed by five extra skin tones.
CHROMATIC_LAB = np.array([
    [37.99, 13.56, 14.06], [65.71, 18.13, 17.81], [49.93, -4.88, -21.93],
    [43.14, -13.10, 21.91], [55.11, 8.84, -25.40],
    [70.72, -33.40, -0.20], [62.66, 36.07, 57.10], [40.02, 10.41, -45.96],
    [51.12, 48.24, 16.25], [30.33, 22.98, -21.59], [72.53, -23.71, 57.26],
    [71.94, 19.36, 67.86], [28.78, 14.18, -50.30], [55.26, -38.34, 31.37],
    [42.10, 53.38, 28.19], [81.73, 4.04, 79.82], [51.94, 49.99, -14.57],
    [51.04, -28.63, -28.64],
    [55.0, 12.0, 16.0], [70.0, 10.0, 18.0], [45.0, 15.0, 20.0],
    [60.0, 16.0, 24.0], [35.0, 10.0, 12.0],
])

# Linear sRGB primaries relative to D50 (Bradford-adapted).
XYZ_D50_TO_SRGB = np.array([
    [3.1338561, -1.6168667, -0.4906146],
    [-0.9787684, 1.9161415, 0.0334540],
    [0.0719453, -0.2289914, 1.4052427],
]) / 100.0

FOUNDATION_SHADES = tuple(str(s) for s in
                          [100, 110, 120, 130, 140, 150, 200, 210, 220, 230, 240, 250,
                           300, 310, 320, 330, 340, 350, 400, 410, 420, 430, 440, 450,
                           500, 510, 520, 530, 540, 550])


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


def neutral_ramp(n=12, y_min=3.0, y_max=95.0, white=D50):
    """``n`` neutral XYZ steps, evenly spaced in L*, between the two Y levels."""
    l_lo = xyz_to_lab(np.array([y_min, y_min, y_min]) / 100 * white.as_array(), white)[0]
    l_hi = xyz_to_lab(np.array([y_max, y_max, y_max]) / 100 * white.as_array(), white)[0]
    lab = np.column_stack([np.linspace(l_lo, l_hi, n), np.zeros(n), np.zeros(n)])
    return lab_to_xyz(lab, white)


def default_references(white=D50):
    """35 reference XYZ values keyed by patch id; ids 6-17 form the neutral ramp."""
    ramp = neutral_ramp(len(DEFAULT_GRAY_IDS), white=white)
    chroma = lab_to_xyz(CHROMATIC_LAB, white)
    refs, ci = {}, 0
    for pid in range(1, 36):
        if pid in DEFAULT_GRAY_IDS:
            refs[pid] = ramp[pid - DEFAULT_GRAY_IDS[0]]
        else:
            refs[pid] = chroma[ci]
            ci += 1
    return refs


@dataclass
class ForwardCameraModel:
    """XYZ -> linear RGB matrix followed by inverse gain-gamma-offset encoding."""

    m: np.ndarray
    encode: tuple
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64).reshape(3, 3)
        self.encode = tuple(c if isinstance(c, ChannelCurve) else ChannelCurve(*c) for c in self.encode)
        if len(self.encode) != 3:
            raise ValueError("need one encoding curve per channel")
        if not np.all(np.isfinite(self.m)) or np.linalg.cond(self.m) >= 1e4:
            raise ValueError("camera matrix must be invertible with condition number < 1e4")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def random(cls, seed, gamma_range=(1.8, 2.4), noise_sigma=0.0, white=D50):
        """Draw a camera with sRGB-like primaries and random channel crosstalk.

        The sensor mixes each sRGB channel toward the neutral mean by a
        random fraction in [0.25, 0.45], which keeps every default chart
        reference in gamut; rows are scaled so the white point maps to 100.
        """
        rng = rng_for(seed)
        k = rng.uniform(0.25, 0.45)
        mix = (1 - k) * np.eye(3) + k / 3 + rng.uniform(-0.02, 0.02, (3, 3)) * (1 - np.eye(3))
        m = mix @ XYZ_D50_TO_SRGB
        m *= (100.0 / (m @ white.as_array()))[:, None]
        gammas = rng.uniform(*gamma_range, 3)
        gains = rng.uniform(102.0, 115.0, 3)
        offsets = rng.uniform(0.0, 1.5, 3)
        curves = tuple(ChannelCurve(float(a), float(g), float(o)) for a, g, o in zip(gains, gammas, offsets))
        return cls(m, curves, noise_sigma, seed)

    def to_dict(self):
        return {
            "m": self.m.tolist(),
            "encode": [{"gain": c.gain, "gamma": c.gamma, "offset": c.offset} for c in self.encode],
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "rng": RNG_NAME,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["m"], tuple(ChannelCurve(e["gain"], e["gamma"], e["offset"]) for e in d["encode"]),
                   d.get("noise_sigma", 0.0), d.get("seed", 0))


def render_patch(xyz, cam, rng=None):
    """Device RGB for XYZ values under ``cam``.

    Returns ``(device, out_of_gamut)``; out-of-gamut values are clipped to
    the encodable range rather than rejected. Noise needs ``rng`` when
    ``cam.noise_sigma > 0``.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    lin = xyz @ cam.m.T
    device = np.empty_like(lin)
    oog = np.zeros(lin.shape[:-1], dtype=bool)
    for c, curve in enumerate(cam.encode):
        base = (lin[..., c] - curve.offset) / curve.gain
        oog |= (base < 0) | (base > 1)
        device[..., c] = 255.0 * np.power(np.clip(base, 0.0, 1.0), 1.0 / curve.gamma)
    if cam.noise_sigma > 0:
        if rng is None:
            rng = rng_for(cam.seed)
        device = device + rng.normal(0.0, cam.noise_sigma, device.shape)
    return np.clip(device, 0.0, 255.0), oog


def _bayer(n):
    m = np.zeros((1, 1))
    while m.shape[0] < n:
        m = np.block([[4 * m, 4 * m + 2], [4 * m + 3, 4 * m + 1]])
    return (m + 0.5) / m.size


_BAYER16 = _bayer(16)


def dither_fill(img, rect, value, anchor=None):
    """Fill ``rect`` with an ordered dither of a fractional device color.

    The dither tile is anchored at ``anchor`` (default: the rectangle's
    central region origin), so any aligned 16x16 block averages to the
    requested value within 1/256 count.
    """
    x, y, w, h = rect
    ax, ay = anchor if anchor is not None else (x + w // 4, y + h // 4)
    rows = (np.arange(y, y + h) - ay) % 16
    cols = (np.arange(x, x + w) - ax) % 16
    thresh = _BAYER16[np.ix_(rows, cols)][..., None]
    value = np.asarray(value, dtype=np.float64).reshape(1, 1, 3)
    img[y:y + h, x:x + w] = np.clip(np.floor(value + thresh), 0, 255).astype(np.uint8)


@dataclass
class SyntheticChart:
    patches: list
    image: np.ndarray
    annotation: dict
    references: dict
    out_of_gamut: list = field(default_factory=list)


def synth_chart(references=None, cam=None, patch_size=32, columns=7, rng=None):
    """Render a flat-patch chart and its observations.

    Patch means are the exact rendered device values (noise included); the
    image carries the same values dithered to 8 bits.
    """
    references = default_references() if references is None else references
    cam = ForwardCameraModel.random(0) if cam is None else cam
    gray = [references[g][1] for g in DEFAULT_GRAY_IDS if g in references]
    if np.any(np.diff(gray) <= 0):
        raise ValueError("neutral ramp must have strictly increasing Y")
    if rng is None:
        rng = rng_for(cam.seed)
    ids = sorted(references)
    rows = -(-len(ids) // columns)
    img = np.zeros((rows * patch_size, columns * patch_size, 3), dtype=np.uint8)
    patches, entries, oog = [], [], []
    for k, pid in enumerate(ids):
        device, flag = render_patch(references[pid], cam, rng)
        rect = ((k % columns) * patch_size, (k // columns) * patch_size, patch_size, patch_size)
        dither_fill(img, rect, device)
        patches.append(PatchObservation(pid, device, references[pid]))
        entries.append({"patch_id": pid, "rect": dict(zip("xywh", rect))})
        if flag:
            oog.append(pid)
    annotation = {"image": "chart.png", "patches": entries, "gray_ids": list(DEFAULT_GRAY_IDS)}
    return SyntheticChart(patches, img, annotation, dict(references), oog)


@dataclass
class MixingModel:
    """Affine ground truth ``target = W @ input + c`` plus Gaussian noise."""

    weights: np.ndarray
    bias: np.ndarray
    noise_sigma: float

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(),
                "noise_sigma": self.noise_sigma}


def default_mixing(rng, noise_sigma=0.5, constant=False):
    if constant:
        return MixingModel(np.zeros((3, 6)), np.array([55.0, 12.0, 18.0]), noise_sigma)
    w = np.hstack([0.35 * np.eye(3), 0.65 * np.eye(3)]) + rng.normal(0.0, 0.03, (3, 6))
    return MixingModel(w, rng.normal(0.0, 1.0, 3), noise_sigma)


def foundation_lab(shade, rng):
    """Plausible swatch color for a shade code: darker and warmer as the code rises."""
    t = (int(shade) - 100) / 450.0
    return np.array([78.0 - 38.0 * t, 8.0 + 6.0 * t, 18.0 + 8.0 * t]) + rng.normal(0.0, 1.0, 3)


def synth_prediction_dataset(n_subjects=19, n_rows=63, shades=FOUNDATION_SHADES, noise_sigma=0.5,
                             seed=0, constant=False):
    """Rows drawn from a known affine mixing model.

    Returns ``(rows, mixing, bare_lab, swatch_lab)`` where the two dicts hold
    the per-subject and per-shade input colors.
    """
    if n_rows < n_subjects:
        raise ValueError("need at least one row per subject")
    rng = rng_for(seed)
    mixing = default_mixing(rng, noise_sigma, constant)
    swatch_lab = {s: foundation_lab(s, rng) for s in shades}
    per_subject = [n_rows // n_subjects] * n_subjects
    for i in range(n_rows - sum(per_subject)):
        per_subject[i] += 1
    if max(per_subject) > len(shades):
        raise ValueError("more rows per subject than available shades")
    bare_lab, rows = {}, []
    for i, count in enumerate(per_subject):
        subject = f"S{i + 1:02d}"
        bare_lab[subject] = np.array([rng.uniform(35, 75), rng.uniform(6, 18), rng.uniform(10, 26)])
        for shade in sorted(rng.choice(len(shades), size=count, replace=False).tolist()):
            x = np.concatenate([bare_lab[subject], swatch_lab[shades[shade]]])
            y = mixing.weights @ x + mixing.bias + rng.normal(0.0, noise_sigma, 3)
            rows.append(SampleRow(subject, shades[shade], x, y))
    rows.sort(key=lambda r: (r.subject_id, r.shade))
    return rows, mixing, bare_lab, swatch_lab
