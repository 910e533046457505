"""Classification evaluation: confusion matrices, one-vs-rest per-class
metrics with macro averages, ROC/AUC, and expert sensitivity/specificity
comparison points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = number of samples of true class i predicted as j."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} != ({k}, {k})")
        if np.any(self.counts < 0):
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    """Per-class one-vs-rest metrics plus macro averages.

    "accuracy" per class is one-vs-rest accuracy. Divisions by zero yield
    0.0 and set a flag naming the affected metric instead of raising.
    """

    per_class: dict[str, ClassMetrics]
    average: ClassMetrics
    auc: float | None = None
    zero_division_flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "per_class": {
                name: vars(m) for name, m in self.per_class.items()
            },
            "average": vars(self.average),
            "auc": self.auc,
            "zero_division_flags": list(self.zero_division_flags),
        }


def confusion(preds, truth, k: int, class_names: tuple[str, ...] | None = None) -> ConfusionMatrix:
    """Count confusion matrix entries; labels must be integers below k."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {truth.shape}")
    if preds.size and (preds.min() < 0 or preds.max() >= k or truth.min() < 0 or truth.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(k))
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def _safe_div(num: float, den: float, flags: list[str], name: str) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics_from_confusion(cm: ConfusionMatrix, auc: float | None = None) -> MetricsReport:
    """One-vs-rest accuracy/precision/recall/F1 per class and macro averages."""
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    flags: list[str] = []
    per_class: dict[str, ClassMetrics] = {}
    for i, name in enumerate(cm.class_names):
        tp = float(cm.counts[i, i])
        fn = float(cm.counts[i].sum() - tp)
        fp = float(cm.counts[:, i].sum() - tp)
        tn = float(total - tp - fn - fp)
        precision = _safe_div(tp, tp + fp, flags, f"{name}.precision")
        recall = _safe_div(tp, tp + fn, flags, f"{name}.recall")
        f1 = _safe_div(2 * precision * recall, precision + recall, flags, f"{name}.f1")
        per_class[name] = ClassMetrics(
            accuracy=(tp + tn) / total, precision=precision, recall=recall, f1=f1
        )
    avg = ClassMetrics(
        accuracy=float(np.mean([m.accuracy for m in per_class.values()])),
        precision=float(np.mean([m.precision for m in per_class.values()])),
        recall=float(np.mean([m.recall for m in per_class.values()])),
        f1=float(np.mean([m.f1 for m in per_class.values()])),
    )
    return MetricsReport(
        per_class=per_class, average=avg, auc=auc, zero_division_flags=tuple(flags)
    )


def roc_curve(scores, truth) -> np.ndarray:
    """ROC points (fpr, tpr) sweeping all thresholds, ties grouped.

    Returns an (m, 2) array from (0,0) to (1,1) in fpr order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape:
        raise ValueError("scores and labels must align")
    n_pos = int((truth == 1).sum())
    n_neg = int((truth == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present for a ROC curve")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    t = truth[order]
    # threshold group boundaries: last index of each distinct score
    distinct = np.nonzero(np.diff(s))[0]
    boundaries = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(t)[boundaries]
    fp = np.cumsum(1 - t)[boundaries]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return np.column_stack([fpr, tpr])


def roc_auc(scores, truth) -> tuple[np.ndarray, float]:
    """ROC curve points and trapezoidal AUC for binary labels."""
    pts = roc_curve(scores, truth)
    auc = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return pts, auc


def one_vs_rest_auc(probs: np.ndarray, truth, k: int) -> dict:
    """Per-class one-vs-rest AUC and their macro average."""
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    per_class = {}
    for c in range(k):
        _, auc = roc_auc(probs[:, c], (truth == c).astype(np.int64))
        per_class[c] = auc
    return {"per_class": per_class, "macro": float(np.mean(list(per_class.values())))}


@dataclass(frozen=True)
class ExpertReading:
    """One pass of one reader over the evaluation set."""

    reader_id: str
    reading_index: int
    labels: tuple[int, ...]


@dataclass(frozen=True)
class SensSpecPoint:
    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class ExpertComparison:
    """Per-reading, per-reader-mean and overall-mean (sens, spec) points.

    For the multi-class task every point is a per-class one-vs-rest dict.
    """

    per_reading: dict[tuple[str, int], dict[str, SensSpecPoint]]
    per_reader: dict[str, dict[str, SensSpecPoint]]
    overall: dict[str, SensSpecPoint] = field(default_factory=dict)


def _sens_spec(pred: np.ndarray, truth: np.ndarray) -> SensSpecPoint:
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    sens = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    return SensSpecPoint(sens, spec)


def expert_points(
    readings: list[ExpertReading], truth, k: int, class_names: tuple[str, ...] | None = None
) -> ExpertComparison:
    """Sensitivity/specificity of each reading, per-reader means, and the
    average clinical expert (mean across readers).

    Binary truth uses a single "positive" entry; k > 2 yields one-vs-rest
    points per class.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if class_names is None:
        class_names = ("positive",) if k == 2 else tuple(f"class_{i}" for i in range(k))
    keys = ["positive"] if k == 2 else list(class_names)

    per_reading: dict[tuple[str, int], dict[str, SensSpecPoint]] = {}
    for reading in readings:
        labels = np.asarray(reading.labels, dtype=np.int64)
        if labels.shape != truth.shape:
            raise ValueError(
                f"reading {reading.reader_id}/{reading.reading_index} does not cover the set"
            )
        points = {}
        if k == 2:
            points["positive"] = _sens_spec(labels, truth)
        else:
            for c, name in enumerate(class_names):
                points[name] = _sens_spec((labels == c).astype(int), (truth == c).astype(int))
        per_reading[(reading.reader_id, reading.reading_index)] = points

    readers = sorted({r.reader_id for r in readings})
    per_reader: dict[str, dict[str, SensSpecPoint]] = {}
    for reader in readers:
        mine = [pts for (rid, _), pts in per_reading.items() if rid == reader]
        per_reader[reader] = {
            key: SensSpecPoint(
                sensitivity=float(np.mean([p[key].sensitivity for p in mine])),
                specificity=float(np.mean([p[key].specificity for p in mine])),
            )
            for key in keys
        }
    overall = {
        key: SensSpecPoint(
            sensitivity=float(np.mean([per_reader[r][key].sensitivity for r in readers])),
            specificity=float(np.mean([per_reader[r][key].specificity for r in readers])),
        )
        for key in keys
    }
    return ExpertComparison(per_reading=per_reading, per_reader=per_reader, overall=overall)
