"""Square ROI geometry and the crop-and-resample warp operator.

A box is parameterized as (t_r, t_c, s): center row/col normalized by the
image height/width, and side length as a fraction of min(H, W). The
denormalized box may extend past the image border; :func:`warp` reads zero
there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ROIParams:
    """Square bounding box: normalized center (t_r, t_c) and side scale s."""

    t_r: float
    t_c: float
    s: float

    def __post_init__(self):
        vals = (self.t_r, self.t_c, self.s)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"ROI parameters must be finite, got {vals}")
        if self.s <= 0:
            raise ValueError(f"ROI scale must be positive, got {self.s}")

    def as_array(self) -> np.ndarray:
        return np.array([self.t_r, self.t_c, self.s], dtype=np.float64)

    def box_pixels(self, shape: tuple[int, ...]) -> tuple[float, float, float]:
        """(center_row, center_col, side) in pixel units for an HxW image."""
        h, w = shape[0], shape[1]
        return self.t_r * h, self.t_c * w, self.s * min(h, w)

    def corners(self) -> tuple[float, float, float, float]:
        """Normalized (r0, c0, r1, c1); the manifest serialization of the box."""
        half = self.s / 2.0
        return (self.t_r - half, self.t_c - half, self.t_r + half, self.t_c + half)

    @classmethod
    def from_corners(cls, r0: float, c0: float, r1: float, c1: float) -> "ROIParams":
        """Inverse of :meth:`corners`; the side is the larger of the two spans."""
        return cls((r0 + r1) / 2.0, (c0 + c1) / 2.0, max(r1 - r0, c1 - c0))

    @classmethod
    def from_array(cls, arr) -> "ROIParams":
        t_r, t_c, s = (float(v) for v in arr)
        return cls(t_r, t_c, s)


def sample_box(
    image: np.ndarray,
    r0: float,
    c0: float,
    r_side: float,
    c_side: float,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Bilinearly resample an axis-aligned source window to out_h x out_w.

    The window spans rows [r0, r0 + r_side) and columns [c0, c0 + c_side) in
    pixel units. Output pixel (i, j) samples the source at
    ``r0 + (i + 0.5) * r_side / out_h - 0.5`` (likewise for columns), so an
    integer-aligned window whose pixel size matches the output grid lands
    exactly on pixel centers and reproduces the crop bit-for-bit. Samples
    outside the image read as zero.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D single-channel image, got shape {img.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be at least 1x1")
    h, w = img.shape
    rows = r0 + (np.arange(out_h, dtype=np.float64) + 0.5) * (r_side / out_h) - 0.5
    cols = c0 + (np.arange(out_w, dtype=np.float64) + 0.5) * (c_side / out_w) - 0.5
    rr = rows[:, None]
    cc = cols[None, :]
    fr = np.floor(rr)
    fc = np.floor(cc)
    wr = rr - fr
    wc = cc - fc
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for dr, dc, wgt in (
        (0, 0, (1.0 - wr) * (1.0 - wc)),
        (0, 1, (1.0 - wr) * wc),
        (1, 0, wr * (1.0 - wc)),
        (1, 1, wr * wc),
    ):
        ri = fr.astype(np.int64) + dr
        ci = fc.astype(np.int64) + dc
        inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
        vals = np.where(inside, img[np.clip(ri, 0, h - 1), np.clip(ci, 0, w - 1)], 0.0)
        out += wgt * vals
    return out


def warp(image: np.ndarray, p: ROIParams, out_size: int) -> np.ndarray:
    """Extract the square box defined by ``p`` as an out_size x out_size image.

    Bilinear resampling; regions of the box falling outside the image are
    zero. Returns float64 regardless of input dtype.
    """
    if out_size < 1:
        raise ValueError(f"out_size must be >= 1, got {out_size}")
    img = np.asarray(image)
    cr, cc, side = p.box_pixels(img.shape)
    r0 = cr - side / 2.0
    c0 = cc - side / 2.0
    return sample_box(img, r0, c0, side, side, out_size, out_size)


def resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the whole image (same resampling path as warp)."""
    img = np.asarray(image)
    return sample_box(img, 0.0, 0.0, float(img.shape[0]), float(img.shape[1]), out_h, out_w)


def two_click_box(
    click1: tuple[float, float],
    click2: tuple[float, float],
    shape: tuple[int, ...],
    min_side_frac: float = 0.05,
) -> ROIParams:
    """Square ROI from two opposite-corner clicks in pixel (row, col) coords.

    The side is the larger of the two click spans, centered between the
    clicks; identical clicks fall back to a box of ``min_side_frac`` of the
    smaller image dimension.
    """
    h, w = shape[0], shape[1]
    cr = (click1[0] + click2[0]) / 2.0
    cc = (click1[1] + click2[1]) / 2.0
    side = max(abs(click1[0] - click2[0]), abs(click1[1] - click2[1]))
    side = max(side, min_side_frac * min(h, w))
    return ROIParams(cr / h, cc / w, side / min(h, w))


def center_contained(
    pred: ROIParams, truth: ROIParams, shape: tuple[int, int] | None = None
) -> bool:
    """Whether the predicted box center lies inside the ground-truth box.

    With ``shape`` given the truth box is denormalized exactly; without it
    the check assumes square images (the two are identical when H == W).
    """
    if shape is None:
        half_r = half_c = truth.s / 2.0
    else:
        h, w = shape
        side = truth.s * min(h, w)
        half_r = side / (2.0 * h)
        half_c = side / (2.0 * w)
    return abs(pred.t_r - truth.t_r) <= half_r and abs(pred.t_c - truth.t_c) <= half_c
