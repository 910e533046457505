"""Scale-agreement verification: re-classify a ROI at multiple scales and
use prediction disagreement as a misclassification signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import training
from .classification import predict_batch
from .roi import ROIParams, warp

DEFAULT_SCALES = (0.75, 1.00, 1.25, 1.50, 1.75, 2.00)


@dataclass(frozen=True)
class ScaleAgreementReport:
    """Per-scale predictions for one study.

    ``support`` is the fraction of scales agreeing with the base-scale
    (factor 1.0) prediction; ``correct_support`` the fraction predicting the
    true label, when a truth is known. Both count all provided scales.
    """

    scales: tuple[float, ...]
    per_scale_labels: tuple[int, ...]
    support: float
    correct_support: float | None = None

    def __post_init__(self):
        if len(self.per_scale_labels) != len(self.scales):
            raise ValueError("one predicted label per scale required")
        if not 0.0 <= self.support <= 1.0:
            raise ValueError(f"support {self.support} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "scales": list(self.scales),
            "per_scale_labels": list(self.per_scale_labels),
            "support": self.support,
            "correct_support": self.correct_support,
        }


def scale_roi(p: ROIParams, factor: float) -> ROIParams:
    """Scale the box side by ``factor`` keeping the center fixed."""
    if factor <= 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return ROIParams(p.t_r, p.t_c, p.s * factor)


def scale_agreement(
    cls_model: training.TrainedModel,
    image: np.ndarray,
    p: ROIParams,
    scales: tuple[float, ...] = DEFAULT_SCALES,
    truth: int | None = None,
) -> ScaleAgreementReport:
    """Classify the ROI at each scale factor and measure agreement.

    The base prediction is the one at factor 1.0 (computed separately when
    1.0 is not among the scales).
    """
    if not scales:
        raise ValueError("scale list must not be empty")
    crops = [warp(image, scale_roi(p, f), cls_model.input_size) for f in scales]
    labels = [pred.label for pred in predict_batch(cls_model, crops)]
    if 1.0 in scales:
        base = labels[list(scales).index(1.0)]
    else:
        base_crop = warp(image, p, cls_model.input_size)
        base = predict_batch(cls_model, [base_crop])[0].label
    support = float(np.mean([lbl == base for lbl in labels]))
    correct = None
    if truth is not None:
        correct = float(np.mean([lbl == truth for lbl in labels]))
    return ScaleAgreementReport(
        scales=tuple(scales),
        per_scale_labels=tuple(labels),
        support=support,
        correct_support=correct,
    )


def flag_uncertain(report: ScaleAgreementReport, threshold: float = 1.0) -> bool:
    """True when fewer than ``threshold`` of the scales agree with the base.

    The default threshold 1.0 flags any disagreement at all.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    return report.support < threshold


def summarize_scale_reports(
    reports: list[ScaleAgreementReport], correct_mask: list[bool] | None = None
) -> dict:
    """Median/std of correct-support over all / correct / misclassified studies.

    The box-plot style summary table: statistics are over per-study
    correct-support values, partitioned by whether the base-scale
    prediction was right.
    """
    values = np.array(
        [r.correct_support if r.correct_support is not None else r.support for r in reports]
    )

    def stats(v: np.ndarray) -> dict:
        if v.size == 0:
            return {"n": 0, "mean": None, "median": None, "std": None}
        return {
            "n": int(v.size),
            "mean": float(v.mean()),
            "median": float(np.median(v)),
            "std": float(v.std()),
        }

    out = {"all": stats(values)}
    if correct_mask is not None:
        mask = np.asarray(correct_mask, dtype=bool)
        out["correct"] = stats(values[mask])
        out["misclassified"] = stats(values[~mask])
    return out
