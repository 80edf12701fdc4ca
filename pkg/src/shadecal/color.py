"""Colorimetric conversions and color-difference math.

All functions operate on numpy arrays whose last axis holds the three
channels, so single colors, patch tables and whole images share one code
path. Arithmetic is done in float64.
"""
from dataclasses import dataclass

import numpy as np

# CIE 1976 constants: f(t) switches branch at (6/29)^3.
_DELTA = 6.0 / 29.0
_T0 = _DELTA ** 3
_LIN_SLOPE = 1.0 / (3.0 * _DELTA ** 2)
_LIN_OFFSET = 4.0 / 29.0


@dataclass(frozen=True)
class WhitePoint:
    xn: float
    yn: float
    zn: float

    def __post_init__(self):
        vals = np.array([self.xn, self.yn, self.zn], dtype=float)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise ValueError(f"white point components must be positive, got {tuple(vals)}")

    def as_array(self):
        return np.array([self.xn, self.yn, self.zn], dtype=np.float64)

    @classmethod
    def parse(cls, text):
        """Parse ``"X,Y,Z"``."""
        parts = [float(p) for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"white point needs three comma-separated values, got {text!r}")
        return cls(*parts)


D50 = WhitePoint(96.42, 100.0, 82.52)


@dataclass(frozen=True)
class ChannelCurve:
    """Gain-gamma-offset curve of one channel: ``gain * (v/255)**gamma + offset``."""

    gain: float
    gamma: float
    offset: float

    def __post_init__(self):
        if not (np.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"gain must be > 0, got {self.gain}")
        if not (0.2 <= self.gamma <= 5.0):
            raise ValueError(f"gamma must lie in [0.2, 5.0], got {self.gamma}")
        if not np.isfinite(self.offset):
            raise ValueError(f"offset must be finite, got {self.offset}")


@dataclass(frozen=True)
class GrayBalanceParams:
    r: ChannelCurve
    g: ChannelCurve
    b: ChannelCurve

    @property
    def channels(self):
        return (self.r, self.g, self.b)

    def to_dict(self):
        return {
            name: {"gain": c.gain, "gamma": c.gamma, "offset": c.offset}
            for name, c in zip("RGB", self.channels)
        }

    @classmethod
    def from_dict(cls, d):
        return cls(*(ChannelCurve(float(d[k]["gain"]), float(d[k]["gamma"]), float(d[k]["offset"]))
                     for k in "RGB"))


def linearize(v, curve):
    """Map device values through a gain-gamma-offset curve.

    ``v`` is on the 0-255 device scale. Negative inputs are rejected unless
    gamma is an integer, since a negative base has no real power otherwise.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("device values must be finite")
    if np.any(v < 0) and float(curve.gamma) != int(curve.gamma):
        raise ValueError("negative device value with non-integer gamma")
    return curve.gain * np.power(v / 255.0, curve.gamma) + curve.offset


def linearize_rgb(rgb, params):
    """Apply per-channel gray-balance curves to an ``(..., 3)`` array."""
    rgb = np.asarray(rgb, dtype=np.float64)
    out = np.empty_like(rgb)
    for i, curve in enumerate(params.channels):
        out[..., i] = linearize(rgb[..., i], curve)
    return out


def _f(t):
    # Negative ratios fall through to the linear branch.
    return np.where(t > _T0, np.cbrt(t), t * _LIN_SLOPE + _LIN_OFFSET)


def _f_inv(ft):
    return np.where(ft > _DELTA, ft ** 3, (ft - _LIN_OFFSET) / _LIN_SLOPE)


def xyz_to_lab(xyz, white=D50):
    xyz = np.asarray(xyz, dtype=np.float64)
    ratios = xyz / white.as_array()
    fx, fy, fz = _f(ratios[..., 0]), _f(ratios[..., 1]), _f(ratios[..., 2])
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_xyz(lab, white=D50):
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    ratios = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1)
    return ratios * white.as_array()


def delta_e76(p, q):
    """Euclidean distance in L*a*b*."""
    d = np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.sqrt(np.sum(d * d, axis=-1))
