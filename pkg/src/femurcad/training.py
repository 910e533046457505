"""Deterministic training machinery shared by the localizer and classifier:
record -> tensor pipelines, the SGD loop with step decay, validation
checkpointing, and model artifact persistence.

A model artifact is a directory:

    config.json        # schema version, kind, architecture, task config
    weights.pt         # state_dict
    norm_stats.json    # input mean/std computed on the training inputs
    training_log.jsonl # one record per epoch (excluded from checksums)
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import dataset as ds
from .models import build_network
from .roi import ROIParams, resize, warp

SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LRDecaySchedule:
    """Step decay: multiply the lr by gamma at each milestone (epoch fraction)."""

    milestones: tuple[float, ...] = (0.5, 0.75)
    gamma: float = 0.1

    def epochs(self, total_epochs: int) -> list[int]:
        return sorted({max(1, int(round(m * total_epochs))) for m in self.milestones})


def set_reference_mode(seed: int) -> None:
    """Single-threaded bit-reproducible torch execution for a fixed seed."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)


def pixel_scale(image: np.ndarray) -> float:
    if image.dtype == np.uint8:
        return 255.0
    if image.dtype == np.uint16:
        return 65535.0
    return 1.0


def prepare_input(
    image: np.ndarray, source: str, roi: ROIParams | None, input_size: int
) -> np.ndarray:
    """Crop/resize one study to the network grid, scaled to [0, 1] float."""
    scale = pixel_scale(np.asarray(image))
    if source == "full":
        out = resize(image, input_size, input_size)
    elif source in ("manual_roi", "auto_roi"):
        if roi is None:
            raise ValueError("record has no ROI but the input source requires one")
        out = warp(image, roi, input_size)
    else:
        raise ValueError(f"unknown input source {source!r}")
    return out / scale


class ImageCache:
    """Read-through cache of decoded images keyed by path."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        if path not in self._store:
            self._store[path] = ds.load_image(path)
        return self._store[path]


def build_inputs(
    records: list[ds.StudyRecord],
    source: str,
    input_size: int,
    cache: ImageCache | None = None,
) -> np.ndarray:
    cache = cache or ImageCache()
    out = np.empty((len(records), input_size, input_size), dtype=np.float64)
    for i, rec in enumerate(records):
        out[i] = prepare_input(cache.get(rec.image_ref), source, rec.roi, input_size)
    return out


def norm_stats(inputs: np.ndarray) -> tuple[float, float]:
    mean = float(inputs.mean())
    std = float(inputs.std())
    return mean, max(std, 1e-6)


def to_batch_tensor(inputs: np.ndarray, mean: float, std: float) -> torch.Tensor:
    arr = (inputs - mean) / std
    return torch.from_numpy(arr.astype(np.float32)).unsqueeze(1)


@dataclass
class TrainedModel:
    """A loaded artifact: network in eval mode plus its config and stats."""

    net: torch.nn.Module
    config: dict
    mean: float
    std: float
    path: Path

    @property
    def model_id(self) -> str:
        return self.config["model_id"]

    @property
    def kind(self) -> str:
        return self.config["kind"]

    @property
    def input_size(self) -> int:
        return self.config["input_size"]

    def forward_inputs(self, inputs: np.ndarray) -> torch.Tensor:
        batch = to_batch_tensor(inputs, self.mean, self.std)
        with torch.no_grad():
            return self.net(batch)

    def embed_inputs(self, inputs: np.ndarray) -> torch.Tensor:
        batch = to_batch_tensor(inputs, self.mean, self.std)
        with torch.no_grad():
            return self.net.embed(batch)


def model_id_for(config: dict) -> str:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]
    return f"{config['kind']}-{config['arch']}-{digest}"


def save_artifact(
    out_dir: Path,
    net: torch.nn.Module,
    config: dict,
    mean: float,
    std: float,
    log_rows: list[dict],
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = dict(config)
    config["schema_version"] = SCHEMA_VERSION
    config["model_id"] = model_id_for(config)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    torch.save(net.state_dict(), out_dir / "weights.pt")
    with open(out_dir / "norm_stats.json", "w", encoding="utf-8") as fh:
        json.dump({"mean": mean, "std": std}, fh, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "training_log.jsonl", "w", encoding="utf-8") as fh:
        for row in log_rows:
            fh.write(json.dumps(row) + "\n")
    return out_dir


def load_artifact(path: str | Path) -> TrainedModel:
    path = Path(path)
    try:
        with open(path / "config.json", encoding="utf-8") as fh:
            config = json.load(fh)
        with open(path / "norm_stats.json", encoding="utf-8") as fh:
            stats = json.load(fh)
        state = torch.load(path / "weights.pt", map_location="cpu", weights_only=True)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"corrupt or missing model artifact at {path}: {exc}") from exc
    if config.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"artifact schema {config.get('schema_version')!r} != supported {SCHEMA_VERSION}"
        )
    net = build_network(config["arch"], config["num_outputs"], config["input_size"])
    net.load_state_dict(state)
    net.eval()
    with open(path / "norm_stats.json", encoding="utf-8") as fh:
        stats = json.load(fh)
    return TrainedModel(net=net, config=config, mean=stats["mean"], std=stats["std"], path=path)


def artifact_checksums(path: str | Path) -> dict[str, str]:
    """SHA-256 of the reproducible artifact files (the timing log is excluded)."""
    path = Path(path)
    out = {}
    for name in ("config.json", "weights.pt", "norm_stats.json"):
        out[name] = hashlib.sha256((path / name).read_bytes()).hexdigest()
    return out


def fit(
    net: torch.nn.Module,
    train_inputs: np.ndarray,
    train_targets: torch.Tensor,
    val_inputs: np.ndarray,
    val_targets: torch.Tensor,
    *,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    momentum: float,
    lr_decay: LRDecaySchedule,
    seed: int,
    loss_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    val_metrics: Callable[[torch.Tensor, torch.Tensor], dict],
    select_key: str,
    select_max: bool,
    mean: float,
    std: float,
    augment_params: ds.AugmentationParams | None = None,
) -> tuple[dict, list[dict]]:
    """SGD training loop; returns (best state_dict, per-epoch log rows).

    Checkpoints the epoch with the best validation ``select_key`` (ties keep
    the earliest). Deterministic given the seed under reference mode.
    """
    optimizer = torch.optim.SGD(net.parameters(), lr=learning_rate, momentum=momentum)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer, milestones=lr_decay.epochs(epochs), gamma=lr_decay.gamma
    )
    shuffle_rng = np.random.default_rng(seed ^ 0x5EED)
    aug_rng = np.random.default_rng(seed ^ 0xA46)
    n = len(train_inputs)
    val_batch = to_batch_tensor(val_inputs, mean, std) if len(val_inputs) else None
    best_state: dict | None = None
    best_score = -math.inf if select_max else math.inf
    log_rows: list[dict] = []
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        net.train()
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch_size):
            idx = perm[lo : lo + batch_size]
            batch_np = train_inputs[idx]
            if augment_params is not None:
                batch_np = np.stack(
                    [ds.augment(img, augment_params, aug_rng) for img in batch_np]
                )
            batch = to_batch_tensor(batch_np, mean, std)
            target = train_targets[torch.from_numpy(idx)]
            optimizer.zero_grad()
            loss = loss_fn(net(batch), target)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * len(idx)
        scheduler.step()
        train_loss = epoch_loss / max(n, 1)
        if not math.isfinite(train_loss):
            raise TrainingDiverged(f"non-finite training loss at epoch {epoch}: {train_loss}")
        net.eval()
        row = {"epoch": epoch, "train_loss": train_loss}
        if val_batch is not None:
            with torch.no_grad():
                val_out = net(val_batch)
                row["val_loss"] = float(loss_fn(val_out, val_targets))
                row.update(val_metrics(val_out, val_targets))
        else:
            row["val_loss"] = None
        row["lr"] = optimizer.param_groups[0]["lr"]
        row["wall_time"] = time.perf_counter() - start
        log_rows.append(row)
        score = row.get(select_key)
        if score is not None:
            better = score > best_score if select_max else score < best_score
            if better or best_state is None:
                best_score = score
                best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    if best_state is None:
        best_state = {k: v.detach().clone() for k, v in net.state_dict().items()}
    return best_state, log_rows
