"""Images, annotations, region colors and the prediction dataset on disk.

File formats
------------
chart / region annotation (JSON)::

    {"image": "chart.png",
     "patches": [{"patch_id": 1, "rect": {"x": 0, "y": 0, "w": 32, "h": 32}}, ...],
     "gray_ids": [6, 7, ..., 17]}

Swatch annotations use ``"shade"`` in place of ``"patch_id"``. Only the
central 50% (per dimension) of each annotated rectangle is sampled.

reference table (CSV): ``patch_id,X,Y,Z``

region table (CSV): ``source_id,subject_id,role,shade,L,a,b,pixel_count,outlier``

dataset (CSV): ``subject_id,shade,skin_L,skin_a,skin_b,fnd_L,fnd_a,fnd_b,out_L,out_a,out_b``
"""
import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .calibration import DEFAULT_GRAY_IDS, PatchObservation
from .color import D50, xyz_to_lab

ROLES = ("bare_skin", "foundation_swatch", "skin_with_foundation")
REGION_HEADER = ["source_id", "subject_id", "role", "shade", "L", "a", "b", "pixel_count", "outlier"]
DATASET_HEADER = ["subject_id", "shade", "skin_L", "skin_a", "skin_b",
                  "fnd_L", "fnd_a", "fnd_b", "out_L", "out_a", "out_b"]


class DatasetError(ValueError):
    pass


class UnpairedSampleError(DatasetError):
    pass


class EmptyRegionError(ValueError):
    pass


# -- atomic file output -----------------------------------------------------

def atomic_write_bytes(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v))


# -- images -----------------------------------------------------------------

def read_image(path):
    """Decode an 8-bit RGB image to a ``(H, W, 3)`` uint8 array, no color management."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_png(path, img):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def write_mask_png(path, mask):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def read_mask_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


# -- annotations and references ---------------------------------------------

def center_slices(rect):
    """Row/column slices of the central 50% of ``rect = (x, y, w, h)``."""
    x, y, w, h = (int(v) for v in rect)
    x0, y0 = x + w // 4, y + h // 4
    return slice(y0, y0 + max(h // 2, 1)), slice(x0, x0 + max(w // 2, 1))


def _rect_tuple(entry):
    r = entry["rect"]
    rect = (int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"]))
    if rect[2] <= 0 or rect[3] <= 0:
        raise ValueError(f"rectangle must have positive size: {r}")
    return rect


def load_annotation(path):
    with open(path) as fh:
        ann = json.load(fh)
    if "patches" not in ann or not isinstance(ann["patches"], list):
        raise ValueError(f"{path}: annotation needs a 'patches' list")
    for entry in ann["patches"]:
        _rect_tuple(entry)
        if "patch_id" not in entry and "shade" not in entry:
            raise ValueError(f"{path}: every patch needs 'patch_id' or 'shade'")
    ann.setdefault("gray_ids", list(DEFAULT_GRAY_IDS))
    return ann


def load_references(path):
    refs = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["patch_id", "X", "Y", "Z"]:
            raise ValueError(f"{path}: expected header patch_id,X,Y,Z, got {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pid, vals = int(row[0]), [float(v) for v in row[1:4]]
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed reference row {row}") from exc
            if len(row) != 4 or not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: malformed reference row {row}")
            refs[pid] = np.array(vals)
    return refs


def references_csv(refs):
    lines = ["patch_id,X,Y,Z"]
    for pid in sorted(refs):
        lines.append(",".join([str(pid)] + [_fmt(v) for v in refs[pid]]))
    return "\n".join(lines) + "\n"


def region_mean(img, rect):
    rows, cols = center_slices(rect)
    region = np.asarray(img, dtype=np.float64)[rows, cols]
    if region.size == 0:
        raise EmptyRegionError(f"rectangle {rect} lies outside the image")
    return region.reshape(-1, 3).mean(axis=0)


def chart_observations(img, annotation, references):
    """Patch means from an annotated chart image, paired with reference XYZ."""
    obs = []
    for entry in annotation["patches"]:
        pid = int(entry["patch_id"])
        if pid not in references:
            raise KeyError(f"patch {pid} has no reference XYZ")
        obs.append(PatchObservation(pid, region_mean(img, _rect_tuple(entry)), references[pid]))
    return obs


# -- region colors ----------------------------------------------------------

@dataclass
class RegionColor:
    source_id: str
    role: str
    lab: np.ndarray
    pixel_count: int
    subject_id: str = ""
    shade: str = ""
    outlier: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role != "bare_skin" and not self.shade:
            raise ValueError(f"role {self.role} requires a shade")
        if self.role != "foundation_swatch" and not self.subject_id:
            raise ValueError(f"role {self.role} requires a subject id")
        if self.pixel_count <= 0:
            raise ValueError("pixel_count must be positive")
        self.lab = np.asarray(self.lab, dtype=np.float64).reshape(3)

    @property
    def key(self):
        return (self.source_id, self.subject_id, self.role, self.shade)


def extract_region_color(xyz_img, region, white=D50, **fields):
    """Mean L*a*b* over a region of a calibrated XYZ image.

    ``region`` is a boolean mask of the image's shape or an ``(x, y, w, h)``
    rectangle (used whole). Pixels are converted to Lab before averaging.
    """
    xyz_img = np.asarray(xyz_img, dtype=np.float64)
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != xyz_img.shape[:2]:
            raise ValueError("mask shape does not match image")
        pixels = xyz_img[region]
    else:
        x, y, w, h = (int(v) for v in region)
        pixels = xyz_img[max(y, 0):y + h, max(x, 0):x + w].reshape(-1, 3)
    if len(pixels) == 0:
        raise EmptyRegionError("region contains no pixels")
    lab = xyz_to_lab(pixels, white).mean(axis=0)
    return RegionColor(lab=lab, pixel_count=len(pixels), **fields)


def regions_csv(regions):
    lines = [",".join(REGION_HEADER)]
    for r in sorted(regions, key=lambda r: r.key):
        lines.append(",".join([r.source_id, r.subject_id, r.role, r.shade]
                              + [_fmt(v) for v in r.lab] + [str(r.pixel_count), str(int(r.outlier))]))
    return "\n".join(lines) + "\n"


def load_regions(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REGION_HEADER:
            raise DatasetError(f"{path}: expected region header {','.join(REGION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                lab = [float(v) for v in row[4:7]]
                if len(row) != len(REGION_HEADER) or not all(math.isfinite(v) for v in lab):
                    raise ValueError("bad field count or non-finite value")
                out.append(RegionColor(source_id=row[0], subject_id=row[1], role=row[2], shade=row[3],
                                       lab=lab, pixel_count=int(row[7]), outlier=bool(int(row[8]))))
            except (ValueError, IndexError) as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
    return out


def upsert_regions(path, new):
    """Merge ``new`` into the region table at ``path``; rows with an equal key are replaced."""
    existing = load_regions(path) if os.path.exists(path) else []
    merged = {r.key: r for r in existing}
    merged.update({r.key: r for r in new})
    atomic_write_text(path, regions_csv(merged.values()))
    return list(merged.values())


# -- prediction dataset -----------------------------------------------------

@dataclass
class SampleRow:
    subject_id: str
    shade: str
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.input = np.asarray(self.input, dtype=np.float64).reshape(6)
        self.target = np.asarray(self.target, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.input)) and np.all(np.isfinite(self.target))):
            raise ValueError("sample values must be finite")


def assemble_dataset(regions):
    """Pair each skin-with-foundation region with its bare-skin and swatch colors.

    Regions flagged as calibration outliers are dropped first, and so is every
    with-foundation sample whose own image or counterpart image was flagged.
    """
    bare, swatch, flagged_subjects, flagged_shades = {}, {}, set(), set()
    for r in regions:
        if r.role == "bare_skin":
            if r.outlier:
                flagged_subjects.add(r.subject_id)
            elif r.subject_id in bare:
                raise DatasetError(f"duplicate bare_skin region for subject {r.subject_id}")
            else:
                bare[r.subject_id] = r
        elif r.role == "foundation_swatch":
            if r.outlier:
                flagged_shades.add(r.shade)
            elif r.shade in swatch:
                raise DatasetError(f"duplicate foundation_swatch region for shade {r.shade}")
            else:
                swatch[r.shade] = r
    rows = []
    for r in regions:
        if r.role != "skin_with_foundation" or r.outlier:
            continue
        if r.subject_id in flagged_subjects or r.shade in flagged_shades:
            continue
        if r.subject_id not in bare:
            raise UnpairedSampleError(f"unpaired sample: no bare_skin region for subject {r.subject_id} "
                                      f"(shade {r.shade})")
        if r.shade not in swatch:
            raise UnpairedSampleError(f"unpaired sample: no foundation_swatch region for shade {r.shade} "
                                      f"(subject {r.subject_id})")
        rows.append(SampleRow(r.subject_id, r.shade,
                              np.concatenate([bare[r.subject_id].lab, swatch[r.shade].lab]), r.lab))
    keys = [(row.subject_id, row.shade) for row in rows]
    if len(set(keys)) != len(keys):
        raise DatasetError("duplicate (subject, shade) samples")
    return sorted(rows, key=lambda row: (row.subject_id, row.shade))


def dataset_csv(rows):
    lines = [",".join(DATASET_HEADER)]
    for row in rows:
        lines.append(",".join([row.subject_id, row.shade]
                              + [_fmt(v) for v in row.input] + [_fmt(v) for v in row.target]))
    return "\n".join(lines) + "\n"


def save_dataset(path, rows):
    atomic_write_text(path, dataset_csv(rows))


def load_dataset(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise DatasetError(f"{path}: expected dataset header {','.join(DATASET_HEADER)}")
        for lineno, fields in enumerate(reader, start=2):
            try:
                if len(fields) != len(DATASET_HEADER):
                    raise ValueError(f"expected {len(DATASET_HEADER)} fields, got {len(fields)}")
                vals = [float(v) for v in fields[2:]]
                if not all(math.isfinite(v) for v in vals):
                    raise ValueError("non-finite value")
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from exc
            rows.append(SampleRow(fields[0], fields[1], vals[:6], vals[6:]))
    return rows


def load_samples(path):
    """Load a dataset CSV, or assemble one from a region table."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header == REGION_HEADER:
        return assemble_dataset(load_regions(path))
    return load_dataset(path)


def rows_to_arrays(rows):
    x = np.array([r.input for r in rows], dtype=np.float64).reshape(-1, 6)
    y = np.array([r.target for r in rows], dtype=np.float64).reshape(-1, 3)
    return x, y
