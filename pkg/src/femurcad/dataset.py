"""Radiograph dataset handling: manifest I/O, patient-wise splits, pelvis
parting, augmentation, and balanced test-set assembly.

The manifest is line-delimited JSON, one study per line:

    {"patient_id": "p0007", "image_ref": "images/p0007_left_ap.png",
     "side": "left", "view": "ap", "label": "A",
     "roi": [0.18, 0.21, 0.58, 0.61], "split": "train"}

``roi`` holds the normalized corners [r0, c0, r1, c1] of the square ROI, or
null when no box was annotated; ``split`` is optional. Relative image_refs
resolve against the manifest's directory. Images are 8- or 16-bit
single-channel PNG.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .roi import ROIParams


class ClassLabel(enum.Enum):
    NOT_FRACTURED = "not_fractured"
    TYPE_A = "A"
    TYPE_B = "B"


# Canonical class orders. Three-class indices follow (not_fractured, A, B);
# the two-class task folds both fracture types into "abnormal".
THREE_CLASS_NAMES = ("not_fractured", "A", "B")
TWO_CLASS_NAMES = ("not_fractured", "abnormal")
SIDES = ("left", "right")
VIEWS = ("ap", "lateral")
SPLITS = ("train", "val", "test")

# Type C fractures are excluded from the task; the loader rejects them.
EXCLUDED_LABELS = ("C",)

MIN_IMAGE_SIDE = 64


def label_index(label: ClassLabel, mode: str = "three_class") -> int:
    """Class index of a label under the given task mode."""
    if mode == "three_class":
        return THREE_CLASS_NAMES.index(label.value)
    if mode == "two_class":
        return 0 if label is ClassLabel.NOT_FRACTURED else 1
    raise ValueError(f"unknown mode {mode!r}")


def class_names(mode: str) -> tuple[str, ...]:
    if mode == "three_class":
        return THREE_CLASS_NAMES
    if mode == "two_class":
        return TWO_CLASS_NAMES
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class StudyRecord:
    """One radiograph with its patient, side/view, label and optional ROI."""

    patient_id: str
    image_ref: str
    side: str
    view: str
    label: ClassLabel
    roi: ROIParams | None = None
    split: str | None = None


class ManifestError(Exception):
    """Raised when a manifest cannot be read; carries per-line errors."""

    def __init__(self, message: str, line_errors: list[tuple[int, str]] | None = None):
        self.line_errors = line_errors or []
        if self.line_errors:
            detail = "; ".join(f"line {n}: {msg}" for n, msg in self.line_errors)
            message = f"{message}: {detail}"
        super().__init__(message)


def _parse_record(obj: dict, base_dir: Path) -> StudyRecord:
    for key in ("patient_id", "image_ref", "side", "view", "label"):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
    raw_label = obj["label"]
    if raw_label in EXCLUDED_LABELS:
        raise ValueError(f"label {raw_label!r} is an excluded class")
    try:
        label = ClassLabel(raw_label)
    except ValueError:
        raise ValueError(f"label {raw_label!r} outside vocabulary") from None
    if obj["side"] not in SIDES:
        raise ValueError(f"side {obj['side']!r} not one of {SIDES}")
    if obj["view"] not in VIEWS:
        raise ValueError(f"view {obj['view']!r} not one of {VIEWS}")
    split = obj.get("split")
    if split is not None and split not in SPLITS:
        raise ValueError(f"split {split!r} not one of {SPLITS}")
    roi = None
    raw_roi = obj.get("roi")
    if raw_roi is not None:
        if len(raw_roi) != 4 or not all(math.isfinite(float(v)) for v in raw_roi):
            raise ValueError(f"roi must be 4 finite floats, got {raw_roi!r}")
        r0, c0, r1, c1 = (float(v) for v in raw_roi)
        eps = 1e-9
        if min(r0, c0, r1, c1) < -eps or max(r0, c0, r1, c1) > 1 + eps:
            raise ValueError(f"roi outside [0,1]: {raw_roi!r}")
        if r1 <= r0 or c1 <= c0:
            raise ValueError(f"roi corners not ordered: {raw_roi!r}")
        roi = ROIParams.from_corners(r0, c0, r1, c1)
    ref = obj["image_ref"]
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    return StudyRecord(
        patient_id=str(obj["patient_id"]),
        image_ref=str(path),
        side=obj["side"],
        view=obj["view"],
        label=label,
        roi=roi,
        split=split,
    )


def load_manifest(path: str | Path) -> list[StudyRecord]:
    """Read a line-delimited manifest, validating every record.

    Invalid lines are collected and raised together as a ManifestError with
    line numbers; a missing file raises immediately.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base_dir = path.parent
    records: list[StudyRecord] = []
    errors: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not an object")
                records.append(_parse_record(obj, base_dir))
            except (ValueError, TypeError) as exc:
                errors.append((lineno, str(exc)))
    if errors:
        raise ManifestError(f"invalid manifest {path}", errors)
    return records


def record_to_json(record: StudyRecord, base_dir: Path | None = None) -> dict:
    ref = record.image_ref
    if base_dir is not None:
        try:
            ref = str(Path(ref).relative_to(base_dir))
        except ValueError:
            pass
    return {
        "patient_id": record.patient_id,
        "image_ref": ref,
        "side": record.side,
        "view": record.view,
        "label": record.label.value,
        "roi": list(record.roi.corners()) if record.roi is not None else None,
        "split": record.split,
    }


def write_manifest(records: list[StudyRecord], path: str | Path, relative_refs: bool = True) -> Path:
    """Write records as line-delimited JSON; refs relative to the manifest dir."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve() if relative_refs else None
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec, base)) + "\n")
    return path


def load_image(path: str | Path) -> np.ndarray:
    """Load a single-channel PNG as a 2-D uint8/uint16 array, validated."""
    with Image.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.uint16)
        elif im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)
        else:
            raise ValueError(f"{path}: expected single-channel image, got mode {im.mode!r}")
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected 2-D image, got shape {arr.shape}")
    if arr.shape[0] < MIN_IMAGE_SIDE or arr.shape[1] < MIN_IMAGE_SIDE:
        raise ValueError(f"{path}: image smaller than {MIN_IMAGE_SIDE}px per side")
    return arr.copy()


def save_image(arr: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.dtype == np.uint8:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif arr.dtype == np.uint16:
        Image.fromarray(arr, mode="I;16").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")


# ---------------------------------------------------------------------------
# Patient-wise splitting


@dataclass(frozen=True)
class SplitAssignment:
    """Patient-level train/val/test assignment for a fixed seed."""

    ratios: tuple[float, float, float]
    assignment: dict[str, str]
    seed: int

    def counts(self) -> dict[str, int]:
        out = {name: 0 for name in SPLITS}
        for split in self.assignment.values():
            out[split] += 1
        return out


def allocate_counts(n: int, fractions) -> list[int]:
    """Integer allocation of n items by fractions (largest remainder)."""
    raw = [n * float(f) for f in fractions]
    base = [int(math.floor(r + 1e-9)) for r in raw]
    remainder = n - sum(base)
    if remainder < 0:
        # float epsilon pushed a floor over; pull back from the largest bins
        order = sorted(range(len(base)), key=lambda i: -base[i])
        for i in order[:(-remainder)]:
            base[i] -= 1
        remainder = 0
    fracs = [r - math.floor(r + 1e-9) for r in raw]
    order = sorted(range(len(base)), key=lambda i: (-fracs[i], i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def split_patientwise(
    records: list[StudyRecord],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> SplitAssignment:
    """Assign every patient to exactly one of train/val/test.

    Deterministic under a fixed seed; all images of a patient share a split,
    and patient counts differ from the target ratios by less than one.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got sum {sum(ratios)!r}")
    patients = sorted({rec.patient_id for rec in records})
    if len(patients) < len(SPLITS):
        raise ValueError(f"need at least {len(SPLITS)} distinct patients, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    counts = allocate_counts(len(patients), ratios)
    assignment: dict[str, str] = {}
    cursor = 0
    for split, count in zip(SPLITS, counts):
        for idx in order[cursor : cursor + count]:
            assignment[patients[idx]] = split
        cursor += count
    return SplitAssignment(ratios=tuple(ratios), assignment=assignment, seed=seed)


def with_splits(records: list[StudyRecord], assignment: SplitAssignment) -> list[StudyRecord]:
    return [replace(rec, split=assignment.assignment[rec.patient_id]) for rec in records]


def split_records(records: list[StudyRecord], split: str) -> list[StudyRecord]:
    return [rec for rec in records if rec.split == split]


def training_view(records: list[StudyRecord], include_lateral: bool = False) -> list[StudyRecord]:
    """Records eligible for training; lateral views are excluded by default."""
    if include_lateral:
        return list(records)
    return [rec for rec in records if rec.view == "ap"]


# ---------------------------------------------------------------------------
# Pelvis parting


def part_pelvis_image(image: np.ndarray, overlap: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Split a pelvis radiograph into left and right halves, one femur each.

    Each half has ceil(W * (0.5 + overlap/2)) columns; with overlap 0 an
    even-width image parts losslessly and an odd-width image shares its
    center column between the halves. No mirroring is applied; record the
    side as metadata instead.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {img.shape}")
    w = img.shape[1]
    if w < 2:
        raise ValueError(f"image too narrow to part: width {w}")
    half = min(w, math.ceil(w * (0.5 + overlap / 2.0)))
    return img[:, :half].copy(), img[:, w - half :].copy()


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentationParams:
    """Ranges for random translation / rotation / scaling.

    Magnitudes default to mild values (the clinically-safe regime):
    +-10% translation, +-15 degrees, scale 0.9-1.1.
    """

    max_translation: float = 0.10
    max_rotation: float = 15.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    seed: int = 0

    def __post_init__(self):
        if self.max_translation < 0 or self.max_rotation < 0:
            raise ValueError("augmentation ranges must be non-negative")
        lo, hi = self.scale_range
        if lo <= 0 or hi <= 0 or lo > hi:
            raise ValueError(f"invalid scale range {self.scale_range}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class TransformSample:
    """One concrete draw: translations as a fraction of each image side."""

    translate_r: float
    translate_c: float
    rotation_deg: float
    scale: float

    def is_identity(self) -> bool:
        return (
            self.translate_r == 0.0
            and self.translate_c == 0.0
            and self.rotation_deg == 0.0
            and self.scale == 1.0
        )


def draw_transform(params: AugmentationParams, rng: np.random.Generator) -> TransformSample:
    t = params.max_translation
    dr = float(rng.uniform(-t, t)) if t > 0 else 0.0
    dc = float(rng.uniform(-t, t)) if t > 0 else 0.0
    rot = float(rng.uniform(-params.max_rotation, params.max_rotation)) if params.max_rotation > 0 else 0.0
    lo, hi = params.scale_range
    scale = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    return TransformSample(dr, dc, rot, scale)


def apply_transform(image: np.ndarray, sample: TransformSample) -> np.ndarray:
    """Apply a rotation/scale about the image center plus a translation.

    Bilinear interpolation, zero fill, output shape preserved. The identity
    sample returns the input bit-exactly.
    """
    if sample.scale <= 0:
        raise ValueError(f"scale must be positive, got {sample.scale}")
    img = np.asarray(image)
    if sample.is_identity():
        return img.copy()
    h, w = img.shape
    theta = math.radians(sample.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # inverse map: output pixel -> input pixel
    inv = np.array([[cos_t, sin_t], [-sin_t, cos_t]], dtype=np.float64) / sample.scale
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([sample.translate_r * h, sample.translate_c * w])
    offset = center - inv @ (center + shift)
    out = ndimage.affine_transform(
        img.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=0.0
    )
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        out = np.clip(np.rint(out), info.min, info.max)
    return out.astype(img.dtype)


def augment(
    image: np.ndarray, params: AugmentationParams, rng: np.random.Generator
) -> np.ndarray:
    """Randomly translate/rotate/scale an image within the declared ranges."""
    return apply_transform(image, draw_transform(params, rng))


# ---------------------------------------------------------------------------
# Balanced test set


def build_balanced_testset(
    records: list[StudyRecord], per_class_counts: tuple[int, int, int]
) -> list[StudyRecord]:
    """Draw a class-balanced evaluation set from the test split.

    ``per_class_counts`` is (type A, type B, not fractured), matching the
    clinical design of (55, 60, 55). Selection is deterministic: the first
    matching test records in manifest order.
    """
    wanted = {
        ClassLabel.TYPE_A: per_class_counts[0],
        ClassLabel.TYPE_B: per_class_counts[1],
        ClassLabel.NOT_FRACTURED: per_class_counts[2],
    }
    if any(v < 0 for v in wanted.values()):
        raise ValueError(f"counts must be non-negative, got {per_class_counts}")
    picked: list[StudyRecord] = []
    got = {label: 0 for label in wanted}
    for rec in records:
        if rec.split != "test":
            continue
        if got[rec.label] < wanted[rec.label]:
            picked.append(rec)
            got[rec.label] += 1
    short = {lbl.value: wanted[lbl] - got[lbl] for lbl in wanted if got[lbl] < wanted[lbl]}
    if short:
        raise ValueError(f"insufficient test records: missing {short}")
    return picked
