"""Figure rendering for the report-style outputs: ROC curves with expert
points, retrieval precision-recall curves, t-SNE scatter, and the
scale-support box plot. All functions write a PNG and return its path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .retrieval import RECALL_LEVELS


def plot_roc(
    curve_points: np.ndarray,
    out_path: str | Path,
    auc: float | None = None,
    expert_points: list[tuple[str, float, float]] | None = None,
    title: str = "ROC",
) -> Path:
    """ROC curve with optional (name, sensitivity, specificity) expert marks."""
    fig, ax = plt.subplots(figsize=(5, 5))
    pts = np.asarray(curve_points)
    label = f"model (AUC {auc:.3f})" if auc is not None else "model"
    ax.plot(pts[:, 0], pts[:, 1], "-", color="tab:blue", label=label)
    ax.plot([0, 1], [0, 1], ":", color="gray", linewidth=0.8)
    if expert_points:
        for name, sens, spec in expert_points:
            ax.plot(1 - spec, sens, "o", label=name)
    ax.set_xlabel("1 - specificity")
    ax.set_ylabel("sensitivity")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, out_path)


def plot_pr_curves(pr_report_json: dict, out_path: str | Path, title: str = "retrieval PR") -> Path:
    """Interpolated 11-point precision-recall curves, per class plus overall."""
    fig, ax = plt.subplots(figsize=(5, 5))
    levels = list(RECALL_LEVELS)
    for name, curve in pr_report_json.get("per_class", {}).items():
        ax.plot(levels, curve["interpolated"], "--", label=f"class {name}")
    overall = pr_report_json["overall"]
    ax.plot(levels, overall["interpolated"], "-", color="black", label="average")
    ax.set_xlabel("recall")
    ax.set_ylabel("interpolated precision")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{title} (mAP {pr_report_json['mean_average_precision']:.3f})")
    ax.legend(fontsize=8)
    return _save(fig, out_path)


def plot_tsne(
    coords: np.ndarray,
    labels: list[int],
    out_path: str | Path,
    class_names: tuple[str, ...] | None = None,
    sides: list[str] | None = None,
    title: str = "t-SNE projection",
) -> Path:
    """2-D embedding scatter, colored by class; side shown by marker shape."""
    coords = np.asarray(coords)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(6, 5))
    markers = {"left": "o", "right": "^"}
    for c in sorted(set(labels.tolist())):
        name = class_names[c] if class_names else f"class {c}"
        mask = labels == c
        if sides is None:
            ax.scatter(coords[mask, 0], coords[mask, 1], s=14, label=name)
        else:
            side_arr = np.asarray(sides)
            for side, marker in markers.items():
                m = mask & (side_arr == side)
                if m.any():
                    ax.scatter(
                        coords[m, 0], coords[m, 1], s=14, marker=marker, label=f"{name} ({side})"
                    )
    ax.set_title(title)
    ax.legend(fontsize=7)
    return _save(fig, out_path)


def plot_scale_support(summary: dict, out_path: str | Path, title: str = "scale support") -> Path:
    """Bar summary of correct-support statistics per partition."""
    fig, ax = plt.subplots(figsize=(5, 4))
    parts = [p for p in ("all", "correct", "misclassified") if p in summary]
    colors = {"all": "tab:blue", "correct": "tab:green", "misclassified": "tab:red"}
    for i, part in enumerate(parts):
        st = summary[part]
        if st["n"] == 0 or st["median"] is None:
            continue
        ax.bar(i, st["median"], yerr=st["std"], color=colors[part], width=0.6, capsize=4)
        ax.text(i, 0.02, f"n={st['n']}", ha="center", fontsize=8)
    ax.set_xticks(range(len(parts)), parts)
    ax.set_ylabel("correct support (median +- std)")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    return _save(fig, out_path)


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
