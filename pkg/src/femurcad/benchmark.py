"""The committed synthetic end-to-end benchmark: generate a desk-scale
dataset, train localizer plus 2- and 3-class ROI classifiers on CPU,
evaluate classification, localization containment, retrieval, and scale
agreement, and persist every artifact with checksums for reproducibility
checks.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import retrieval as rt
from . import verification as vf
from .classification import ClassifierConfig, extract_embeddings, predict_batch, train_classifier
from .localization import LocalizerConfig, containment_rate, predict_roi, train_localizer
from .roi import warp
from .training import ImageCache, LRDecaySchedule, artifact_checksums, load_artifact

BENCHMARK_SEED = 514


@dataclass(frozen=True)
class BenchmarkConfig:
    """Knobs for the synthetic benchmark; defaults are the committed run."""

    seed: int = BENCHMARK_SEED
    n_patients: int = 170
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    input_size: int = 64
    loc_epochs: int = 60
    cls_epochs: int = 40
    batch_size: int = 16
    loc_lr: float = 5e-3
    cls_lr: float = 1e-2
    augment: ds.AugmentationParams = field(
        default_factory=lambda: ds.AugmentationParams(
            max_translation=0.05, max_rotation=10.0, scale_range=(0.8, 1.25)
        )
    )
    retrieval_k: int = 10
    scale_flag_threshold: float = 1.0


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _metrics_for(preds, truth, mode: str, probs: np.ndarray) -> dict:
    names = ds.class_names(mode)
    k = len(names)
    cm = ev.confusion(preds, truth, k, names)
    if k == 2:
        _, auc = ev.roc_auc(probs[:, 1], truth)
    else:
        auc = ev.one_vs_rest_auc(probs, truth, k)["macro"]
    report = ev.metrics_from_confusion(cm, auc=auc)
    return {
        "overall_accuracy": float(np.mean(np.asarray(preds) == np.asarray(truth))),
        "confusion": cm.counts.tolist(),
        "report": report.to_json(),
    }


def run_benchmark(out_dir: str | Path, cfg: BenchmarkConfig = BenchmarkConfig()) -> dict:
    """Run the full pipeline; returns the report dict (also written to disk)."""
    t_start = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    # data
    from .synth import synth_generate

    manifest = synth_generate(
        cfg.n_patients, cfg.class_mix, seed=cfg.seed, out_dir=out_dir / "data"
    )
    records = ds.load_manifest(manifest)
    assignment = ds.split_patientwise(records, cfg.split_ratios, seed=cfg.seed)
    records = ds.with_splits(records, assignment)
    split_manifest = ds.write_manifest(records, out_dir / "data" / "manifest.jsonl")
    train = ds.training_view(ds.split_records(records, "train"))
    val = ds.training_view(ds.split_records(records, "val"))
    test = ds.split_records(records, "test")
    cache = ImageCache()

    # models
    loc_cfg = LocalizerConfig(
        arch="tiny",
        input_size=cfg.input_size,
        epochs=cfg.loc_epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.loc_lr,
        lr_decay_schedule=LRDecaySchedule(),
        seed=cfg.seed,
    )
    loc_dir = train_localizer(train, val, loc_cfg, out_dir / "models" / "localizer", cache)

    def cls_cfg(mode: str) -> ClassifierConfig:
        return ClassifierConfig(
            mode=mode,
            input_source="manual_roi",
            arch="tiny",
            input_size=cfg.input_size,
            epochs=cfg.cls_epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.cls_lr,
            lr_decay_schedule=LRDecaySchedule(),
            seed=cfg.seed,
            augment=cfg.augment,
        )

    cls3_dir = train_classifier(train, val, cls_cfg("three_class"), out_dir / "models" / "cls3", cache)
    cls2_dir = train_classifier(train, val, cls_cfg("two_class"), out_dir / "models" / "cls2", cache)

    loc = load_artifact(loc_dir)
    cls3 = load_artifact(cls3_dir)
    cls2 = load_artifact(cls2_dir)

    # test-set evaluation: manual ROI vs automatic localization
    test_images = [cache.get(rec.image_ref) for rec in test]
    truth3 = [ds.label_index(rec.label, "three_class") for rec in test]
    truth2 = [ds.label_index(rec.label, "two_class") for rec in test]

    manual_crops = [
        warp(img, rec.roi, cfg.input_size) for img, rec in zip(test_images, test)
    ]
    pred_boxes = [predict_roi(loc, img) for img in test_images]
    auto_crops = [
        warp(img, box, cfg.input_size) for img, box in zip(test_images, pred_boxes)
    ]

    results: dict = {"seed": cfg.seed, "config": _config_json(cfg)}
    results["dataset"] = {
        "n_records": len(records),
        "splits": {name: len(ds.split_records(records, name)) for name in ds.SPLITS},
    }

    for name, model, truth in (
        ("cls3_manual", cls3, truth3),
        ("cls2_manual", cls2, truth2),
    ):
        preds = predict_batch(model, manual_crops)
        probs = np.array([p.probs for p in preds])
        results[name] = _metrics_for([p.label for p in preds], truth, model.config["mode"], probs)
    for name, model, truth in (
        ("cls3_auto", cls3, truth3),
        ("cls2_auto", cls2, truth2),
    ):
        preds = predict_batch(model, auto_crops)
        probs = np.array([p.probs for p in preds])
        results[name] = _metrics_for([p.label for p in preds], truth, model.config["mode"], probs)

    results["containment_rate"] = containment_rate(pred_boxes, [rec.roi for rec in test])
    results["f1_gap"] = {
        "two_class": abs(
            results["cls2_manual"]["report"]["per_class"]["abnormal"]["f1"]
            - results["cls2_auto"]["report"]["per_class"]["abnormal"]["f1"]
        ),
        "three_class_avg": abs(
            results["cls3_manual"]["report"]["average"]["f1"]
            - results["cls3_auto"]["report"]["average"]["f1"]
        ),
    }

    # retrieval: pool = training set, queries = test set, 3-class labels
    pool_crops = [warp(cache.get(rec.image_ref), rec.roi, cfg.input_size) for rec in train]
    pool_labels = [ds.label_index(rec.label, "three_class") for rec in train]
    pool_refs = [rec.image_ref for rec in train]
    pool_emb = np.stack([e.values for e in extract_embeddings(cls3, pool_crops)])
    index = rt.build_index(pool_emb, pool_labels, pool_refs, cls3.model_id)
    index_path = rt.save_index(index, out_dir / "index" / "trainpool.idx")

    query_emb = [e.values for e in extract_embeddings(cls3, manual_crops)]
    full_rankings = [rt.query(index, q, index.size) for q in query_emb]
    raw_rankings = [
        rt.raw_pixel_baseline(crop, pool_crops, index.size, pool_refs, pool_labels)
        for crop in manual_crops
    ]
    class_totals = {c: pool_labels.count(c) for c in set(pool_labels)}
    pr_emb = rt.eleven_point_pr(full_rankings, truth3, class_totals)
    pr_raw = rt.eleven_point_pr(raw_rankings, truth3, class_totals)
    p_at_k, r_at_k = rt.precision_recall_at_k(
        full_rankings, truth3, cfg.retrieval_k, class_totals
    )
    recall_monotone = _recall_monotone(full_rankings, truth3, class_totals)
    results["retrieval"] = {
        "map_embedding": pr_emb.mean_average_precision,
        "map_raw_pixels": pr_raw.mean_average_precision,
        "precision_at_k": p_at_k,
        "recall_at_k": r_at_k,
        "k": cfg.retrieval_k,
        "recall_monotone": recall_monotone,
        "pr_embedding": pr_emb.to_json(),
        "pr_raw_pixels": pr_raw.to_json(),
    }

    # scale-agreement verification on the test split
    scale_payload = {}
    for tag, model, truth in (("three_class", cls3, truth3), ("two_class", cls2, truth2)):
        reports = [
            vf.scale_agreement(model, img, rec.roi, vf.DEFAULT_SCALES, truth=t)
            for img, rec, t in zip(test_images, test, truth)
        ]
        base_idx = vf.DEFAULT_SCALES.index(1.0)
        base_labels = [r.per_scale_labels[base_idx] for r in reports]
        correct = [b == t for b, t in zip(base_labels, truth)]
        flagged = [vf.flag_uncertain(r, cfg.scale_flag_threshold) for r in reports]
        err_flagged = [not c for c, f in zip(correct, flagged) if f]
        err_unflagged = [not c for c, f in zip(correct, flagged) if not f]
        scale_payload[tag] = {
            "mean_correct_support": float(np.mean([r.correct_support for r in reports])),
            "n_flagged": len(err_flagged),
            "n_unflagged": len(err_unflagged),
            "flagged_error_rate": float(np.mean(err_flagged)) if err_flagged else None,
            "unflagged_error_rate": float(np.mean(err_unflagged)) if err_unflagged else None,
            "summary": vf.summarize_scale_reports(reports, correct),
            "reports": [r.to_json() for r in reports],
        }
    results["scales"] = scale_payload

    # t-SNE export of the retrieval pool
    coords = rt.tsne_project(pool_emb, seed=cfg.seed)
    tsne_payload = {
        "points": coords.tolist(),
        "labels": pool_labels,
        "refs": [str(Path(r).name) for r in pool_refs],
        "sides": [rec.side for rec in train],
    }
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(exist_ok=True)
    with open(reports_dir / "tsne.json", "w", encoding="utf-8") as fh:
        json.dump(tsne_payload, fh)

    results["runtime_seconds"] = time.perf_counter() - t_start

    with open(reports_dir / "benchmark_report.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)

    # checksums over the reproducible artifacts (timing-free files only)
    checksums: dict[str, str] = {}
    data_dir = out_dir / "data"
    for png in sorted(data_dir.rglob("*.png")):
        checksums[str(png.relative_to(out_dir))] = _sha256(png)
    checksums["data/manifest.jsonl"] = _sha256(split_manifest)
    for model_dir in (loc_dir, cls3_dir, cls2_dir):
        for name, digest in artifact_checksums(model_dir).items():
            checksums[str(Path(model_dir).relative_to(out_dir) / name)] = digest
    checksums[str(index_path.relative_to(out_dir))] = _sha256(index_path)
    with open(out_dir / "checksums.json", "w", encoding="utf-8") as fh:
        json.dump(checksums, fh, indent=2, sort_keys=True)

    return results


def _config_json(cfg: BenchmarkConfig) -> dict:
    out = asdict(cfg)
    out["augment"] = asdict(cfg.augment)
    return out


def _recall_monotone(rankings, truth_labels, class_totals) -> bool:
    """recall@k non-decreasing in k for every query (exhaustive check)."""
    for res, label in zip(rankings, truth_labels):
        total = class_totals[int(label)]
        hits = 0
        prev = 0.0
        for lbl in res.labels():
            hits += lbl == int(label)
            recall = hits / total
            if recall < prev - 1e-15:
                return False
            prev = recall
    return True


def load_report(out_dir: str | Path) -> dict:
    with open(Path(out_dir) / "reports" / "benchmark_report.json", encoding="utf-8") as fh:
        return json.load(fh)


def load_checksums(out_dir: str | Path) -> dict:
    with open(Path(out_dir) / "checksums.json", encoding="utf-8") as fh:
        return json.load(fh)


def strip_timing(report: dict) -> dict:
    """Report with wall-clock fields removed, for run-to-run comparison."""
    out = json.loads(json.dumps(report))
    out.pop("runtime_seconds", None)
    return out
