"""Fracture classification: cross-entropy loss, classifier training over
full radiographs or ROIs (2- or 3-class), prediction, penultimate-layer
embeddings, and the localize-then-classify pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import dataset as ds
from . import training
from .localization import predict_roi
from .models import build_network
from .roi import ROIParams, warp

PROB_EPS = 1e-12


@dataclass(frozen=True)
class ClassifierConfig:
    """Training configuration for the fracture classifier.

    Defaults mirror the reference protocol: 224px input, 80 epochs,
    batch 64, momentum 0.9, lr 1e-2. The tiny architecture profile exists so
    the full pipeline can run on CPU in minutes.
    """

    mode: str = "three_class"
    input_source: str = "manual_roi"
    arch: str = "resnet50"
    input_size: int = 224
    epochs: int = 80
    batch_size: int = 64
    momentum: float = 0.9
    learning_rate: float = 1e-2
    lr_decay_schedule: training.LRDecaySchedule = field(default_factory=training.LRDecaySchedule)
    pretrained: bool = False
    class_weighting: str = "none"  # or "inverse_frequency"
    seed: int = 0
    deterministic: bool = True
    augment: ds.AugmentationParams | None = field(default_factory=ds.AugmentationParams)

    def __post_init__(self):
        if self.mode not in ("two_class", "three_class"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.input_source not in ("full", "manual_roi", "auto_roi"):
            raise ValueError(f"unknown input source {self.input_source!r}")
        if self.class_weighting not in ("none", "inverse_frequency"):
            raise ValueError(f"unknown class weighting {self.class_weighting!r}")


@dataclass(frozen=True)
class Prediction:
    """Per-class probabilities plus the argmax label and input provenance."""

    probs: tuple[float, ...]
    label: int
    source: str
    model_id: str

    def __post_init__(self):
        if any(p < 0 for p in self.probs):
            raise ValueError(f"negative probability in {self.probs}")
        total = sum(self.probs)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {total!r}, not 1")


@dataclass(frozen=True)
class EmbeddingVector:
    """Penultimate-layer feature vector for one image."""

    values: np.ndarray
    dim: int
    model_id: str

    def __post_init__(self):
        if self.values.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("embedding contains non-finite values")


def softmax(scores: np.ndarray) -> np.ndarray:
    z = np.asarray(scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_loss(true: np.ndarray, pred: np.ndarray) -> float:
    """Cross entropy -sum(y * log(p)); mean over rows for batched input.

    Probabilities are clamped at 1e-12 before the log.
    """
    y = np.asarray(true, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if y.shape != p.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {p.shape}")
    p = np.clip(p, PROB_EPS, None)
    per_sample = -(y * np.log(p)).sum(axis=-1)
    return float(per_sample.mean())


def class_loss_from_scores(true: np.ndarray, scores: np.ndarray) -> float:
    """Cross entropy of softmax(scores); gradient wrt scores is softmax - y."""
    return class_loss(true, softmax(scores))


def class_loss_grad_scores(true: np.ndarray, scores: np.ndarray) -> np.ndarray:
    y = np.asarray(true, dtype=np.float64)
    g = softmax(scores) - y
    if y.ndim > 1:
        g = g / y.shape[0]
    return g


def _records_to_labels(records: list[ds.StudyRecord], mode: str) -> torch.Tensor:
    return torch.tensor([ds.label_index(rec.label, mode) for rec in records], dtype=torch.long)


def _macro_f1(pred_labels: np.ndarray, true_labels: np.ndarray, k: int) -> float:
    f1s = []
    for c in range(k):
        tp = int(np.sum((pred_labels == c) & (true_labels == c)))
        fp = int(np.sum((pred_labels == c) & (true_labels != c)))
        fn = int(np.sum((pred_labels != c) & (true_labels == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(f1s))


def train_classifier(
    train: list[ds.StudyRecord],
    val: list[ds.StudyRecord],
    cfg: ClassifierConfig,
    out_dir: str | Path,
    cache: training.ImageCache | None = None,
) -> Path:
    """Train the classifier; returns the artifact directory.

    Minimizes cross entropy with SGD, augmenting training inputs only, and
    checkpoints the epoch with the best validation macro F1.
    """
    names = ds.class_names(cfg.mode)
    k = len(names)
    train_labels = _records_to_labels(train, cfg.mode)
    present = set(train_labels.tolist())
    absent = [names[c] for c in range(k) if c not in present]
    if absent:
        raise ValueError(f"classes absent from training split: {absent}")
    if cfg.deterministic:
        training.set_reference_mode(cfg.seed)
    else:
        torch.manual_seed(cfg.seed)
    cache = cache or training.ImageCache()
    source = "manual_roi" if cfg.input_source == "auto_roi" else cfg.input_source
    train_x = training.build_inputs(train, source, cfg.input_size, cache)
    val_x = training.build_inputs(val, source, cfg.input_size, cache)
    val_labels = _records_to_labels(val, cfg.mode)
    mean, std = training.norm_stats(train_x)
    net = build_network(cfg.arch, k, cfg.input_size, pretrained=cfg.pretrained)

    weight = None
    if cfg.class_weighting == "inverse_frequency":
        counts = torch.bincount(train_labels, minlength=k).float()
        weight = counts.sum() / (k * counts.clamp(min=1.0))

    def loss_fn(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        return F.cross_entropy(out, target, weight=weight)

    def val_metrics(out: torch.Tensor, target: torch.Tensor) -> dict:
        pred = out.argmax(dim=1).numpy()
        true = target.numpy()
        return {
            "val_f1": _macro_f1(pred, true, k),
            "val_accuracy": float((pred == true).mean()),
        }

    best_state, log_rows = training.fit(
        net,
        train_x,
        train_labels,
        val_x,
        val_labels,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        lr_decay=cfg.lr_decay_schedule,
        seed=cfg.seed,
        loss_fn=loss_fn,
        val_metrics=val_metrics,
        select_key="val_f1",
        select_max=True,
        mean=mean,
        std=std,
        augment_params=cfg.augment,
    )
    net.load_state_dict(best_state)
    config = {
        "kind": "classifier",
        "arch": cfg.arch,
        "num_outputs": k,
        "input_size": cfg.input_size,
        "mode": cfg.mode,
        "input_source": cfg.input_source,
        "classes": list(names),
        "embedding_dim": net.embedding_dim,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "momentum": cfg.momentum,
        "learning_rate": cfg.learning_rate,
        "lr_decay_milestones": list(cfg.lr_decay_schedule.milestones),
        "lr_decay_gamma": cfg.lr_decay_schedule.gamma,
        "class_weighting": cfg.class_weighting,
        "pretrained": cfg.pretrained,
        "seed": cfg.seed,
    }
    return training.save_artifact(Path(out_dir), net, config, mean, std, log_rows)


def _check_classifier(model: training.TrainedModel) -> None:
    if model.kind != "classifier":
        raise ValueError(f"expected a classifier artifact, got kind {model.kind!r}")


def predict_batch(model: training.TrainedModel, images: list[np.ndarray]) -> list[Prediction]:
    """Classify ready inputs (full radiographs or ROI crops, per the model).

    Each image is resized to the network grid; for the square crops a ROI
    model expects this is the identity warp, matching the training path.
    """
    _check_classifier(model)
    source = model.config["input_source"]
    inputs = np.stack(
        [training.prepare_input(img, "full", None, model.input_size) for img in images]
    )
    with torch.no_grad():
        probs = torch.softmax(model.forward_inputs(inputs), dim=1).numpy().astype(np.float64)
    probs = probs / probs.sum(axis=1, keepdims=True)
    out = []
    for row in probs:
        out.append(
            Prediction(
                probs=tuple(float(v) for v in row),
                label=int(np.argmax(row)),
                source=source,
                model_id=model.model_id,
            )
        )
    return out


def predict(model: training.TrainedModel, image: np.ndarray) -> Prediction:
    """Classify one image; a pure function of (model, image)."""
    return predict_batch(model, [image])[0]


def extract_embedding(model: training.TrainedModel, image: np.ndarray) -> EmbeddingVector:
    """Penultimate-layer feature vector for one image."""
    return extract_embeddings(model, [image])[0]


def extract_embeddings(
    model: training.TrainedModel, images: list[np.ndarray]
) -> list[EmbeddingVector]:
    _check_classifier(model)
    inputs = np.stack(
        [training.prepare_input(img, "full", None, model.input_size) for img in images]
    )
    vecs = model.embed_inputs(inputs).numpy().astype(np.float64)
    dim = model.config["embedding_dim"]
    return [EmbeddingVector(values=v, dim=dim, model_id=model.model_id) for v in vecs]


def predict_pipeline(
    image: np.ndarray,
    cls_model: training.TrainedModel,
    loc_model: training.TrainedModel | None = None,
    manual_roi: ROIParams | None = None,
) -> tuple[Prediction, ROIParams | None]:
    """Classify a full radiograph, optionally localizing the ROI first.

    A caller-supplied manual box overrides the localizer (the two-click
    flow). Returns the prediction and the box actually used, if any.
    """
    _check_classifier(cls_model)
    source = cls_model.config["input_source"]
    if (loc_model is not None or manual_roi is not None) and source == "full":
        raise ValueError("full-image classifier cannot be paired with a ROI stage")
    roi: ROIParams | None = None
    if manual_roi is not None:
        roi = manual_roi
    elif loc_model is not None:
        roi = predict_roi(loc_model, image)
    if roi is None:
        if source != "full":
            raise ValueError(f"{source} classifier needs a localizer or a manual box")
        return predict(cls_model, image), None
    crop = warp(image, roi, cls_model.input_size)
    # the crop is already on the network grid; classify it directly
    pred = predict(cls_model, crop)
    return pred, roi
