"""Procedural desk-scale radiograph generator.

Draws a stylized proximal femur (head, neck, shaft, trochanters) on a noisy
background. Type A studies carve a jagged break across the trochanteric
region, type B a straight break across the subcapital neck. Every image gets
a ground-truth square ROI around the proximal femur that fully encloses the
break motif. Output is byte-identical for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset import ClassLabel, StudyRecord, allocate_counts, save_image, write_manifest
from .roi import ROIParams

DEFAULT_IMAGE_SIZE = 256


@dataclass(frozen=True)
class SynthGroundTruth:
    """Generator-side truth for one study, used by tests and debugging."""

    roi: ROIParams
    break_bbox_px: tuple[float, float, float, float] | None  # (r0, c0, r1, c1)


def _capsule_mask(rr, cc, a, b, width, feather=2.0):
    """Soft mask of a thick segment from point a to b (row, col coords)."""
    ar, ac = a
    br, bc = b
    dr, dc = br - ar, bc - ac
    denom = dr * dr + dc * dc
    if denom == 0:
        t = np.zeros_like(rr)
    else:
        t = np.clip(((rr - ar) * dr + (cc - ac) * dc) / denom, 0.0, 1.0)
    pr = ar + t * dr
    pc = ac + t * dc
    d = np.hypot(rr - pr, cc - pc)
    return np.clip((width + feather - d) / feather, 0.0, 1.0)


def _disk_mask(rr, cc, center, radius, feather=2.0):
    d = np.hypot(rr - center[0], cc - center[1])
    return np.clip((radius + feather - d) / feather, 0.0, 1.0)


def _rotate_scale(points, anchor, angle_deg, scale):
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    out = []
    for r, c in points:
        vr, vc = r - anchor[0], c - anchor[1]
        out.append(
            (
                anchor[0] + scale * (cos_t * vr - sin_t * vc),
                anchor[1] + scale * (sin_t * vr + cos_t * vc),
            )
        )
    return out


def render_study(
    label: ClassLabel,
    side: str,
    rng: np.random.Generator,
    size: int = DEFAULT_IMAGE_SIZE,
) -> tuple[np.ndarray, SynthGroundTruth]:
    """Draw one synthetic radiograph and its ground truth."""
    u = size / 256.0  # geometry is authored on a 256px canvas

    # anatomy for a left-sided femur (head toward low column indices)
    head = (72.0 * u, 92.0 * u)
    head_r = 24.0 * u
    troch = (102.0 * u, 146.0 * u)
    neck_w = 13.0 * u
    shaft_top = (96.0 * u, 150.0 * u)
    shaft_bot = (234.0 * u, 162.0 * u)
    shaft_w = 17.0 * u
    greater = (86.0 * u, 156.0 * u)
    greater_r = 15.0 * u
    lesser = (128.0 * u, 162.0 * u)
    lesser_r = 9.0 * u

    # per-study jitter
    anchor = (100.0 * u, 140.0 * u)
    angle = float(rng.uniform(-6.0, 6.0))
    scale = float(rng.uniform(0.92, 1.08))
    shift = rng.uniform(-12.0 * u, 12.0 * u, size=2)

    def place(points):
        rotated = _rotate_scale(points, anchor, angle, scale)
        moved = [(r + shift[0], c + shift[1]) for r, c in rotated]
        if side == "right":
            moved = [(r, (size - 1) - c) for r, c in moved]
        return moved

    head, troch, shaft_top, shaft_bot, greater, lesser = place(
        [head, troch, shaft_top, shaft_bot, greater, lesser]
    )
    head_r, neck_w, shaft_w, greater_r, lesser_r = (
        v * scale for v in (head_r, neck_w, shaft_w, greater_r, lesser_r)
    )

    rows = np.arange(size, dtype=np.float64)[:, None]
    cols = np.arange(size, dtype=np.float64)[None, :]

    bg_level = float(rng.uniform(28.0, 44.0))
    bone_level = float(rng.uniform(150.0, 190.0))
    grad = float(rng.uniform(-10.0, 10.0))
    noise_sigma = float(rng.uniform(4.0, 9.0))
    blur_sigma = float(rng.uniform(0.5, 1.1))
    break_depth = float(rng.uniform(0.50, 0.95))

    parts = [
        (1.05, _disk_mask(rows, cols, head, head_r)),
        (0.95, _capsule_mask(rows, cols, head, troch, neck_w)),
        (1.00, _capsule_mask(rows, cols, shaft_top, shaft_bot, shaft_w)),
        (0.98, _disk_mask(rows, cols, greater, greater_r)),
        (0.90, _disk_mask(rows, cols, lesser, lesser_r)),
    ]
    bone = np.zeros((size, size), dtype=np.float64)
    for level, mask in parts:
        bone = np.maximum(bone, level * mask)

    img = bg_level + grad * (rows / size) + (bone_level - bg_level) * bone

    break_pts: list[tuple[float, float]] = []
    break_mask = None
    if label is not ClassLabel.NOT_FRACTURED:
        neck_dir = np.array([troch[0] - head[0], troch[1] - head[1]])
        neck_dir = neck_dir / np.linalg.norm(neck_dir)
        perp = np.array([-neck_dir[1], neck_dir[0]])
        if label is ClassLabel.TYPE_B:
            # subcapital: straight band across the neck just below the head
            frac = float(rng.uniform(0.34, 0.48))
            center = np.array(head) + frac * (np.array(troch) - np.array(head))
            half = (17.0 * u) * scale
            a = center - half * perp
            b = center + half * perp
            break_pts = [tuple(a), tuple(b)]
            break_mask = _capsule_mask(rows, cols, a, b, 3.4 * u, feather=1.6 * u)
        else:
            # trochanteric: jagged polyline across the trochanter/shaft top
            center = np.array(
                [
                    (greater[0] + lesser[0]) / 2.0 + float(rng.uniform(-4.0, 4.0)) * u,
                    (greater[1] + lesser[1]) / 2.0 + float(rng.uniform(-4.0, 4.0)) * u,
                ]
            )
            axis = perp  # roughly across the shaft
            half = (21.0 * u) * scale
            n_seg = 4
            ts = np.linspace(-half, half, n_seg + 1)
            amp = 4.5 * u
            pts = []
            for i, t in enumerate(ts):
                wobble = amp if i % 2 == 0 else -amp
                pts.append(tuple(center + t * axis + wobble * neck_dir))
            break_pts = pts
            break_mask = np.zeros((size, size), dtype=np.float64)
            for a, b in zip(pts[:-1], pts[1:]):
                break_mask = np.maximum(
                    break_mask, _capsule_mask(rows, cols, a, b, 3.0 * u, feather=1.4 * u)
                )
        img -= break_depth * (bone_level - bg_level) * break_mask * np.minimum(bone * 1.2, 1.0)

    img = ndimage.gaussian_filter(img, sigma=blur_sigma)
    img += rng.normal(0.0, noise_sigma, size=(size, size))
    img = np.clip(img, 0.0, 255.0).astype(np.uint8)

    # ground-truth ROI: square around the proximal femur, containing the break
    cr = (head[0] + troch[0]) / 2.0 + float(rng.uniform(-5.0, 5.0)) * u
    cc = (head[1] + troch[1]) / 2.0 + float(rng.uniform(-5.0, 5.0)) * u
    side_px = (112.0 * u) * scale * float(rng.uniform(0.95, 1.1))
    margin = 6.0 * u
    covered = [head, troch, greater, lesser] + break_pts
    radii = [head_r, neck_w, greater_r, lesser_r] + [4.0 * u] * len(break_pts)
    need = 0.0
    for (pr, pc), rad in zip(covered, radii):
        need = max(need, abs(pr - cr) + rad + margin, abs(pc - cc) + rad + margin)
    side_px = min(float(size), max(side_px, 2.0 * need))
    half = side_px / 2.0
    cr = float(np.clip(cr, half, size - half))
    cc = float(np.clip(cc, half, size - half))
    roi = ROIParams(cr / size, cc / size, side_px / size)

    bbox = None
    if break_pts:
        pr = [p[0] for p in break_pts]
        pc = [p[1] for p in break_pts]
        pad = 4.0 * u
        bbox = (min(pr) - pad, min(pc) - pad, max(pr) + pad, max(pc) + pad)
    return img, SynthGroundTruth(roi=roi, break_bbox_px=bbox)


def synth_generate(
    n_patients: int,
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
    seed: int = 0,
    out_dir: str | Path = "synth_data",
    contralateral: bool = False,
    image_size: int = DEFAULT_IMAGE_SIZE,
) -> Path:
    """Generate a synthetic dataset and write its manifest.

    ``class_mix`` is (not_fractured, type A, type B) patient fractions.
    With ``contralateral`` set, fractured patients get a second, healthy
    image of the opposite side (sharing the patient id). Returns the
    manifest path. Pure function of (n_patients, class_mix, seed).
    """
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    if len(class_mix) != 3 or any(f < 0 for f in class_mix):
        raise ValueError(f"class_mix must be 3 non-negative fractions, got {class_mix}")
    if abs(sum(class_mix) - 1.0) > 1e-9:
        raise ValueError(f"class_mix must sum to 1, got {sum(class_mix)!r}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    labels_order = (ClassLabel.NOT_FRACTURED, ClassLabel.TYPE_A, ClassLabel.TYPE_B)
    counts = allocate_counts(n_patients, class_mix)
    labels = [lbl for lbl, n in zip(labels_order, counts) for _ in range(n)]
    rng = np.random.default_rng(seed)
    rng.shuffle(labels)

    records: list[StudyRecord] = []
    for idx, label in enumerate(labels):
        pid = f"p{idx:04d}"
        side = "left" if rng.random() < 0.5 else "right"
        img, truth = render_study(label, side, rng, size=image_size)
        ref = f"images/{pid}_{side}_ap.png"
        save_image(img, out_dir / ref)
        records.append(
            StudyRecord(
                patient_id=pid,
                image_ref=ref,
                side=side,
                view="ap",
                label=label,
                roi=truth.roi,
            )
        )
        if contralateral and label is not ClassLabel.NOT_FRACTURED:
            other = "right" if side == "left" else "left"
            img2, truth2 = render_study(ClassLabel.NOT_FRACTURED, other, rng, size=image_size)
            ref2 = f"images/{pid}_{other}_ap.png"
            save_image(img2, out_dir / ref2)
            records.append(
                StudyRecord(
                    patient_id=pid,
                    image_ref=ref2,
                    side=other,
                    view="ap",
                    label=ClassLabel.NOT_FRACTURED,
                    roi=truth2.roi,
                )
            )

    manifest = out_dir / "manifest.jsonl"
    # image_refs are already relative to out_dir
    write_manifest(records, manifest, relative_refs=False)
    return manifest
