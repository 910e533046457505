"""Embedding-based case retrieval: an immutable exact nearest-neighbor
index, precision/recall at k, the 11-point interpolated precision-recall
curve with mean average precision, a raw-pixel distance baseline, and t-SNE
projection of the embedding space.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .roi import resize

INDEX_SCHEMA_VERSION = 1
RECALL_LEVELS = tuple(np.round(np.linspace(0.0, 1.0, 11), 1))
DEFAULT_K_VALUES = (5, 10, 30, 50, 80, 100, 200, 300, 400)


@dataclass(frozen=True)
class EmbeddingIndex:
    """Immutable pool of embedding vectors with labels and image refs."""

    vectors: np.ndarray
    labels: np.ndarray
    item_refs: tuple[str, ...]
    model_id: str

    def __post_init__(self):
        if self.vectors.ndim != 2 or len(self.vectors) < 1:
            raise ValueError("vectors must be a non-empty n x d matrix")
        if len(self.labels) != len(self.vectors) or len(self.item_refs) != len(self.vectors):
            raise ValueError("labels and refs must align with vectors")
        self.vectors.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vectors).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update("\x00".join(self.item_refs).encode())
        h.update(self.model_id.encode())
        return h.hexdigest()


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked retrieval for one query: (item_ref, distance, label) ascending.

    Equal distances keep pool insertion order.
    """

    items: tuple[tuple[str, float, int], ...]
    query_ref: str | None = None

    def __post_init__(self):
        dists = [d for _, d, _ in self.items]
        if any(b < a - 1e-12 for a, b in zip(dists, dists[1:])):
            raise ValueError("distances must be non-decreasing")

    def labels(self) -> list[int]:
        return [lbl for _, _, lbl in self.items]


def build_index(embeddings, labels, refs, model_id: str) -> EmbeddingIndex:
    """Assemble an immutable index; inputs must agree in length and dim."""
    vectors = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if vectors.ndim != 2 or len(vectors) == 0:
        raise ValueError("embedding pool must be a non-empty n x d matrix")
    if len(labels) != len(vectors) or len(refs) != len(vectors):
        raise ValueError(
            f"inconsistent lengths: {len(vectors)} vectors, {len(labels)} labels, {len(refs)} refs"
        )
    return EmbeddingIndex(
        vectors=vectors, labels=labels, item_refs=tuple(str(r) for r in refs), model_id=model_id
    )


def save_index(index: EmbeddingIndex, path: str | Path) -> Path:
    """Persist the index with an embedded content checksum (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema_version": INDEX_SCHEMA_VERSION,
        "vectors": np.ascontiguousarray(index.vectors),
        "labels": np.ascontiguousarray(index.labels),
        "item_refs": list(index.item_refs),
        "model_id": index.model_id,
        "checksum": index.checksum(),
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)
    return path


def load_index(path: str | Path) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("schema_version") != INDEX_SCHEMA_VERSION:
        raise ValueError(f"unsupported index schema {payload.get('schema_version')!r}")
    index = EmbeddingIndex(
        vectors=payload["vectors"],
        labels=payload["labels"],
        item_refs=tuple(payload["item_refs"]),
        model_id=payload["model_id"],
    )
    if index.checksum() != payload["checksum"]:
        raise ValueError(f"index checksum mismatch in {path}")
    return index


def query(index: EmbeddingIndex, q, k: int) -> RetrievalResult:
    """Exact k nearest neighbors by Euclidean distance (stable tie order)."""
    vec = np.asarray(getattr(q, "values", q), dtype=np.float64)
    if vec.shape != (index.dim,):
        raise ValueError(f"query dim {vec.shape} != index dim ({index.dim},)")
    if not 1 <= k <= index.size:
        raise ValueError(f"k={k} outside [1, {index.size}]")
    d2 = ((index.vectors - vec) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")[:k]
    items = tuple(
        (index.item_refs[i], float(np.sqrt(d2[i])), int(index.labels[i])) for i in order
    )
    return RetrievalResult(items=items)


def raw_pixel_baseline(
    query_image: np.ndarray,
    pool_images: list[np.ndarray],
    k: int,
    pool_refs: list[str] | None = None,
    pool_labels: list[int] | None = None,
    common_size: int = 64,
) -> RetrievalResult:
    """Nearest neighbors on flattened resized pixels (the retrieval baseline)."""
    if not pool_images:
        raise ValueError("empty pool")
    refs = pool_refs if pool_refs is not None else [str(i) for i in range(len(pool_images))]
    labels = pool_labels if pool_labels is not None else [0] * len(pool_images)
    flat = np.stack(
        [resize(img, common_size, common_size).ravel() for img in pool_images]
    )
    index = build_index(flat, labels, refs, model_id="raw_pixels")
    qvec = resize(query_image, common_size, common_size).ravel()
    return query(index, qvec, k)


def precision_recall_at_k(
    results: list[RetrievalResult],
    truth_labels,
    k: int,
    class_totals: dict[int, int],
) -> tuple[float, float]:
    """Mean precision and recall over queries at a fixed retrieval depth.

    Relevance means sharing the query's class; recall is against the total
    number of that class in the pool.
    """
    truth_labels = list(truth_labels)
    if len(results) != len(truth_labels):
        raise ValueError("one truth label per query required")
    precisions = []
    recalls = []
    for res, label in zip(results, truth_labels):
        if k > len(res.items):
            raise ValueError(f"k={k} exceeds ranked list length {len(res.items)}")
        total = class_totals.get(int(label), 0)
        if total <= 0:
            raise ValueError(f"class {label} has no items in the pool")
        hits = sum(1 for lbl in res.labels()[:k] if lbl == label)
        precisions.append(hits / k)
        recalls.append(hits / total)
    return float(np.mean(precisions)), float(np.mean(recalls))


@dataclass(frozen=True)
class PRCurve:
    """Measured (recall, precision) points plus the 11-point interpolation."""

    points: tuple[tuple[float, float], ...]
    interpolated: tuple[float, ...]
    average_precision: float


@dataclass(frozen=True)
class PRReport:
    per_class: dict[int, PRCurve]
    overall: PRCurve
    mean_average_precision: float

    def to_json(self) -> dict:
        def curve(c: PRCurve) -> dict:
            return {
                "points": [list(p) for p in c.points],
                "interpolated": list(c.interpolated),
                "average_precision": c.average_precision,
            }

        return {
            "per_class": {str(k): curve(v) for k, v in self.per_class.items()},
            "overall": curve(self.overall),
            "mean_average_precision": self.mean_average_precision,
        }


def _interpolate(points: list[tuple[float, float]]) -> tuple[tuple[float, ...], float]:
    """Interpolated precision: max precision at any recall >= r, r in 0..1 by 0.1."""
    interp = []
    for level in RECALL_LEVELS:
        candidates = [p for r, p in points if r >= level - 1e-12]
        interp.append(max(candidates) if candidates else 0.0)
    return tuple(interp), float(np.mean(interp))


def eleven_point_pr(
    results: list[RetrievalResult],
    truth_labels,
    class_totals: dict[int, int],
    k_values: tuple[int, ...] = DEFAULT_K_VALUES,
) -> PRReport:
    """11-point interpolated precision-recall over retrieval depths.

    Measures mean precision/recall at every depth in ``k_values`` (capped at
    the pool size), per class and over all queries, interpolates precision
    at the 11 standard recall levels, and reports the mean of those 11
    values as average precision; mAP macro-averages the per-class APs.
    """
    if not results:
        raise ValueError("no retrieval results to evaluate")
    truth_labels = list(int(v) for v in truth_labels)
    depth = min(len(res.items) for res in results)
    ks = sorted({min(k, depth) for k in k_values})
    if not ks:
        raise ValueError("no usable retrieval depths")

    def measured(indices: list[int]) -> list[tuple[float, float]]:
        pts = []
        for k in ks:
            p, r = precision_recall_at_k(
                [results[i] for i in indices], [truth_labels[i] for i in indices], k, class_totals
            )
            pts.append((r, p))
        return pts

    classes = sorted(set(truth_labels))
    per_class = {}
    for c in classes:
        idx = [i for i, lbl in enumerate(truth_labels) if lbl == c]
        pts = measured(idx)
        interp, ap = _interpolate(pts)
        per_class[c] = PRCurve(points=tuple(pts), interpolated=interp, average_precision=ap)
    pts_all = measured(list(range(len(results))))
    interp_all, ap_all = _interpolate(pts_all)
    overall = PRCurve(points=tuple(pts_all), interpolated=interp_all, average_precision=ap_all)
    mean_ap = float(np.mean([c.average_precision for c in per_class.values()]))
    return PRReport(per_class=per_class, overall=overall, mean_average_precision=mean_ap)


def tsne_project(embeddings, seed: int = 0, perplexity: float = 30.0) -> np.ndarray:
    """Project embeddings to 2-D with t-SNE (exact method, deterministic).

    Perplexity is capped at (n - 1) / 3; requires n > 3 * perplexity for the
    requested value to be used as-is.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 5:
        raise ValueError("need at least 5 embedding vectors to project")
    from sklearn.manifold import TSNE

    eff_perplexity = min(float(perplexity), (len(x) - 1) / 3.0)
    coords = TSNE(
        n_components=2,
        perplexity=eff_perplexity,
        random_state=seed,
        init="pca",
        method="exact",
    ).fit_transform(x)
    return np.asarray(coords, dtype=np.float64)
