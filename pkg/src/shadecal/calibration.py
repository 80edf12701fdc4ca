"""Color-checker calibration: gray balancing, patch grouping and per-group
polynomial regression from device RGB to CIE XYZ.

The functional API (``fit_gray_balance``, ``group_patches``,
``build_profile``, ``apply_profile``, ``evaluate_chart``) does the work;
:class:`ChartCalibrator` wraps it as a scikit-learn transformer.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .color import D50, ChannelCurve, GrayBalanceParams, delta_e76, linearize_rgb, xyz_to_lab

N_TERMS = 11
AFFINE_COLUMNS = (0, 1, 2, 10)
GAMMA_BOUNDS = (0.2, 5.0)
# offsets near zero need many more digits of gamma than a loose search gives
GAMMA_TOL = 1e-8
OUTLIER_DELTA_E = 3.0
DEFAULT_GRAY_IDS = tuple(range(6, 18))
SET_DISTANCE_THRESHOLD = 80.0


class FitError(ValueError):
    """A calibration stage could not be fitted from the given data."""


@dataclass
class PatchObservation:
    patch_id: int
    mean_rgb: np.ndarray
    reference_xyz: np.ndarray

    def __post_init__(self):
        self.patch_id = int(self.patch_id)
        self.mean_rgb = np.asarray(self.mean_rgb, dtype=np.float64).reshape(3)
        self.reference_xyz = np.asarray(self.reference_xyz, dtype=np.float64).reshape(3)


def _stack(patches):
    ids = np.array([p.patch_id for p in patches], dtype=int)
    if len(set(ids.tolist())) != len(ids):
        raise ValueError("patch ids must be unique within a chart")
    rgb = np.array([p.mean_rgb for p in patches], dtype=np.float64).reshape(-1, 3)
    xyz = np.array([p.reference_xyz for p in patches], dtype=np.float64).reshape(-1, 3)
    return ids, rgb, xyz


# -- gray balance -----------------------------------------------------------

def _golden_section(fun, lo, hi, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def _gain_offset(x, target, gamma):
    basis = np.column_stack([np.power(x, gamma), np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    resid = basis @ coef - target
    return coef[0], coef[1], float(resid @ resid)


def fit_channel_curve(device, target, tol=GAMMA_TOL, n_scan=49):
    """Least-squares gain-gamma-offset fit for one channel.

    Gain and offset are solved in closed form for each trial gamma; gamma
    itself is found by golden-section search. A coarse scan over the gamma
    range picks the bracket first so a non-unimodal profile cannot trap the
    search at the wrong end.
    """
    device = np.asarray(device, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if device.size != target.size:
        raise FitError("device and target lengths differ")
    if device.size < 3:
        raise FitError(f"need at least 3 gray pairs, got {device.size}")
    if np.ptp(device) == 0:
        raise FitError("device values are constant; gamma is unidentifiable")
    if np.any(device < 0):
        raise FitError("negative device values")
    x = device / 255.0

    def sse(g):
        return _gain_offset(x, target, g)[2]

    lo, hi = GAMMA_BOUNDS
    grid = np.linspace(lo, hi, n_scan)
    i = int(np.argmin([sse(g) for g in grid]))
    gamma = _golden_section(sse, grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)], tol)
    gain, offset, _ = _gain_offset(x, target, gamma)
    if not gain > 0:
        raise FitError(f"fitted gain {gain:.4g} is not positive; device values do not increase with Y")
    return ChannelCurve(float(gain), float(gamma), float(offset))


def fit_gray_balance(device_rgb, reference_y, tol=GAMMA_TOL):
    """Fit per-channel curves so that every channel maps gray patches to Y."""
    device_rgb = np.asarray(device_rgb, dtype=np.float64).reshape(-1, 3)
    reference_y = np.asarray(reference_y, dtype=np.float64).ravel()
    return GrayBalanceParams(*(fit_channel_curve(device_rgb[:, c], reference_y, tol) for c in range(3)))


# -- grouping ---------------------------------------------------------------

def _sq_dists(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=-1)


def kmeans(points, k, max_iter=100):
    """Deterministic Lloyd k-means.

    Seeds with the farthest pair of points, then greedily adds the point
    farthest from the chosen seeds. Ties in any argmin/argmax go to the
    earlier row, so callers must present rows in a canonical order.
    Returns ``(labels, centroids)``.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < k:
        raise FitError(f"cannot form {k} clusters from {n} points")
    d = _sq_dists(points, points)
    i, j = np.unravel_index(int(np.argmax(d)), d.shape)
    seeds = [min(i, j), max(i, j)] if k > 1 else [0]
    seeds = seeds[:k]
    while len(seeds) < k:
        nearest = d[:, seeds].min(axis=1)
        nearest[seeds] = -1.0
        seeds.append(int(np.argmax(nearest)))
    centroids = points[seeds].copy()
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(points, centroids), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return labels, centroids


@dataclass
class GroupAssignment:
    """Three set centroids in device RGB plus the set (1, 2 or 3) of each patch."""

    centroids: np.ndarray
    membership: dict
    mode: str = "kmeans3"

    def members(self, set_index):
        return sorted(pid for pid, s in self.membership.items() if s == set_index)

    @property
    def active_sets(self):
        return sorted(set(self.membership.values()))


def _canonical_clusters(ids, labels, centroids, k):
    # Order clusters by their smallest patch id so labels do not depend on seeding.
    keys = []
    for c in range(k):
        member_ids = ids[labels == c]
        keys.append((0, int(member_ids.min())) if len(member_ids) else (1, c))
    order = sorted(range(k), key=lambda c: keys[c])
    remap = {old: new for new, old in enumerate(order)}
    return np.array([remap[l] for l in labels]), centroids[order]


def group_patches(patches, skin_centroid=None, threshold=SET_DISTANCE_THRESHOLD):
    """Split chart patches into three sets.

    With a skin centroid, Set 1 holds the patches closer than ``threshold``
    (device RGB units) to it and k-means with k=2 splits the rest. Without
    one, or when fewer than three patches remain outside Set 1, k-means with
    k=3 forms all sets.
    """
    if len(patches) < 3:
        raise FitError(f"need at least 3 patches to group, got {len(patches)}")
    ids, rgb, _ = _stack(patches)
    order = np.argsort(ids, kind="stable")
    ids, rgb = ids[order], rgb[order]

    if skin_centroid is not None:
        skin_centroid = np.asarray(skin_centroid, dtype=np.float64).reshape(3)
        near = np.sqrt(np.sum((rgb - skin_centroid) ** 2, axis=1)) < threshold
        if np.count_nonzero(~near) >= 3:
            labels, cents = kmeans(rgb[~near], 2)
            labels, cents = _canonical_clusters(ids[~near], labels, cents, 2)
            membership = {int(pid): 1 for pid in ids[near]}
            membership.update({int(pid): int(l) + 2 for pid, l in zip(ids[~near], labels)})
            centroids = np.vstack([skin_centroid, cents])
            return GroupAssignment(centroids, membership, mode="skin+kmeans2")
        mode = "kmeans3-fallback"
    else:
        mode = "kmeans3"
    labels, cents = kmeans(rgb, 3)
    labels, cents = _canonical_clusters(ids, labels, cents, 3)
    membership = {int(pid): int(l) + 1 for pid, l in zip(ids, labels)}
    return GroupAssignment(cents, membership, mode=mode)


# -- polynomial regression --------------------------------------------------

def polynomial_features(lin):
    """``[R, G, B, R², G², B², RG, GB, RB, RGB, 1]`` along the last axis."""
    lin = np.asarray(lin, dtype=np.float64)
    r, g, b = lin[..., 0], lin[..., 1], lin[..., 2]
    return np.stack(
        [r, g, b, r * r, g * g, b * b, r * g, g * b, r * b, r * g * b, np.ones_like(r)],
        axis=-1,
    )


def _ridge_solve(q, p, rel_ridge):
    gram = q.T @ q
    lam = rel_ridge * np.trace(gram) / q.shape[1]
    return np.linalg.solve(gram + lam * np.eye(q.shape[1]), q.T @ p)


def fit_transform(features, targets, rel_ridge=1e-8, prior=None, basis=None):
    """Fit the 3x11 matrix ``T`` with ``targets ≈ features @ T.T``.

    Returns ``(T, basis)`` where ``basis`` is ``"poly11"`` or, when fewer
    than eleven samples are available, ``"affine4"`` (only the R, G, B and
    constant columns of ``T`` are nonzero). ``basis`` forces a choice.

    The ridge term is ``rel_ridge * trace(QᵀQ) / n_terms`` computed on
    column-equilibrated features; polynomial columns span six orders of
    magnitude, so a ridge on raw columns would shrink the linear terms.
    The ridge pulls toward ``prior`` (a 3x11 matrix, default zero), so
    directions the samples do not constrain keep the prior's mapping.
    """
    q = np.asarray(features, dtype=np.float64).reshape(-1, N_TERMS)
    p = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(q) == 0:
        raise FitError("cannot fit a transform from zero samples")
    if len(q) != len(p):
        raise FitError("features and targets differ in length")
    if basis is None:
        basis = "poly11" if len(q) >= N_TERMS else "affine4"
    cols = list(range(N_TERMS)) if basis == "poly11" else list(AFFINE_COLUMNS)
    sub = q[:, cols]
    t0 = np.zeros((3, len(cols))) if prior is None else np.asarray(prior, dtype=np.float64)[:, cols]
    scale = np.sqrt(np.mean(sub * sub, axis=0))
    scale[scale == 0] = 1.0
    coef = _ridge_solve(sub / scale, p - sub @ t0.T, rel_ridge) / scale[:, None]
    t = np.zeros((3, N_TERMS))
    t[:, cols] = coef.T + t0
    return t, basis


def _apply_matrix(feats, t):
    # Fixed summation order per pixel keeps results independent of how the
    # pixels are batched.
    out = np.zeros(feats.shape[:-1] + (3,))
    for j in range(3):
        acc = np.zeros(feats.shape[:-1])
        for k in range(N_TERMS):
            acc = acc + feats[..., k] * t[j, k]
        out[..., j] = acc
    return out


# -- profile ----------------------------------------------------------------

@dataclass
class CalibrationProfile:
    gray: GrayBalanceParams
    groups: GroupAssignment
    transforms: dict
    bases: dict
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format": "shadecal-profile/1",
            "gray": self.gray.to_dict(),
            "grouping_mode": self.groups.mode,
            "centroids": [list(map(float, c)) for c in self.groups.centroids],
            "membership": {str(k): v for k, v in sorted(self.groups.membership.items())},
            "sets": [
                {
                    "set": s,
                    "basis": self.bases[s],
                    "matrix": [float(v) for v in self.transforms[s].ravel()],
                }
                for s in sorted(self.transforms)
            ],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "shadecal-profile/1":
            raise ValueError(f"unsupported profile format {d.get('format')!r}")
        groups = GroupAssignment(
            np.array(d["centroids"], dtype=np.float64).reshape(3, 3),
            {int(k): int(v) for k, v in d["membership"].items()},
            d.get("grouping_mode", "kmeans3"),
        )
        transforms, bases = {}, {}
        for entry in d["sets"]:
            s = int(entry["set"])
            m = np.array(entry["matrix"], dtype=np.float64)
            if m.size != 3 * N_TERMS or not np.all(np.isfinite(m)):
                raise ValueError(f"set {s}: matrix must hold 33 finite values")
            transforms[s] = m.reshape(3, N_TERMS)
            bases[s] = entry["basis"]
        if not transforms:
            raise ValueError("profile has no transforms")
        return cls(GrayBalanceParams.from_dict(d["gray"]), groups, transforms, bases,
                   dict(d.get("metadata", {})))


def build_profile(patches, gray_ids=DEFAULT_GRAY_IDS, skin_centroid=None, rel_ridge=1e-8,
                  white=D50):
    """Fit the whole calibration chain from chart observations."""
    by_id = {p.patch_id: p for p in patches}
    missing = [g for g in gray_ids if g not in by_id]
    if missing:
        raise FitError(f"gray patches {missing} are not among the observed patches")
    gray_obs = [by_id[g] for g in gray_ids]
    gray = fit_gray_balance([p.mean_rgb for p in gray_obs], [p.reference_xyz[1] for p in gray_obs])

    groups = group_patches(patches, skin_centroid)
    feats = polynomial_features(linearize_rgb([p.mean_rgb for p in patches], gray))
    refs = [p.reference_xyz for p in patches]
    # whole-chart fits act as ridge priors, so a set whose members span too
    # few color directions (e.g. only neutrals) does not collapse chroma
    priors = {}
    transforms, bases = {}, {}
    for s in groups.active_sets:
        members = [by_id[pid] for pid in groups.members(s)]
        basis = "poly11" if len(members) >= N_TERMS else "affine4"
        if basis not in priors:
            priors[basis] = fit_transform(feats, refs, rel_ridge, basis=basis)[0]
        lin = linearize_rgb([p.mean_rgb for p in members], gray)
        t, basis = fit_transform(polynomial_features(lin), [p.reference_xyz for p in members],
                                 rel_ridge, prior=priors[basis], basis=basis)
        transforms[s], bases[s] = t, basis
    profile = CalibrationProfile(gray, groups, transforms, bases)
    ev = evaluate_chart(profile, patches, white)
    profile.metadata["fit_delta_e"] = {str(pid): float(e) for pid, e in zip(ev.patch_ids, ev.delta_e)}
    profile.metadata["fit_mean_delta_e"] = ev.mean_delta_e
    return profile


def classify_pixels(rgb, profile):
    """Index (1-based set number) of the nearest active centroid per pixel."""
    rgb = np.asarray(rgb, dtype=np.float64)
    active = sorted(profile.transforms)
    best = np.full(rgb.shape[:-1], np.inf)
    label = np.zeros(rgb.shape[:-1], dtype=int)
    for s in active:  # ascending, strict < keeps ties on the lower set
        c = profile.groups.centroids[s - 1]
        d = (rgb[..., 0] - c[0]) ** 2 + (rgb[..., 1] - c[1]) ** 2 + (rgb[..., 2] - c[2]) ** 2
        closer = d < best
        best = np.where(closer, d, best)
        label = np.where(closer, s, label)
    return label


def apply_profile(img, profile):
    """Calibrate device RGB values (any ``(..., 3)`` array) to XYZ."""
    rgb = np.asarray(img, dtype=np.float64)
    labels = classify_pixels(rgb, profile)
    feats = polynomial_features(linearize_rgb(rgb, profile.gray))
    out = np.zeros(rgb.shape)
    for s, t in profile.transforms.items():
        sel = labels == s
        if np.any(sel):
            out[sel] = _apply_matrix(feats[sel], t)
    return out


@dataclass
class ChartEvaluation:
    patch_ids: list
    delta_e: np.ndarray
    calibrated_xyz: np.ndarray
    mean_delta_e: float
    outlier: bool

    def to_dict(self):
        return {
            "per_patch": [{"patch_id": int(pid), "delta_e": float(e)}
                          for pid, e in zip(self.patch_ids, self.delta_e)],
            "mean_delta_e": self.mean_delta_e,
            "outlier": self.outlier,
        }


def evaluate_chart(profile, patches, white=D50, threshold=OUTLIER_DELTA_E):
    if not patches:
        raise ValueError("no patches to evaluate")
    ids, rgb, ref = _stack(patches)
    cal = apply_profile(rgb, profile)
    de = delta_e76(xyz_to_lab(cal, white), xyz_to_lab(ref, white))
    mean = float(np.mean(de))
    return ChartEvaluation(ids.tolist(), de, cal, mean, bool(mean > threshold))


# -- estimator --------------------------------------------------------------

class ChartCalibrator(BaseEstimator, TransformerMixin):
    """Transformer mapping device RGB to CIE XYZ, fitted on chart patches.

    ``fit(X, y)`` takes patch mean RGB values ``X`` (n, 3) and reference XYZ
    ``y`` (n, 3); ``patch_ids`` defaults to ``1..n``. ``transform`` accepts
    an (n, 3) table or an (H, W, 3) image.
    """

    def __init__(self, gray_ids=DEFAULT_GRAY_IDS, skin_centroid=None, rel_ridge=1e-8):
        self.gray_ids = gray_ids
        self.skin_centroid = skin_centroid
        self.rel_ridge = rel_ridge

    def fit(self, X, y, patch_ids=None):
        X = check_array(X, dtype=np.float64)
        y = check_array(y, dtype=np.float64)
        if X.shape[1] != 3 or y.shape != X.shape:
            raise ValueError("X and y must both be (n_patches, 3)")
        if patch_ids is None:
            patch_ids = range(1, len(X) + 1)
        patches = [PatchObservation(pid, rgb, xyz) for pid, rgb, xyz in zip(patch_ids, X, y)]
        self.profile_ = build_profile(patches, tuple(self.gray_ids), self.skin_centroid,
                                      self.rel_ridge)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != 3 or not np.all(np.isfinite(X)):
            raise ValueError("expected finite values with 3 channels on the last axis")
        return apply_profile(X, self.profile_)
