"""Weighted cross-entropy training with early stopping and checkpointing."""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import NUM_CLASSES, ClassLabel, ImageRecord, PredictionVector, Split, model_input_resize
from .curriculum import EpochSchedule, batch_iterator
from .errors import (
    ConfigError,
    DivergedLoss,
    EmptyClass,
    EmptySplit,
    ShapeMismatch,
    ValidationError,
)
from .evaluation import evaluate
from .models import Backbone, build_backbone, get_spec, to_tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


# ---------------------------------------------------------------- class weights


@dataclass(frozen=True)
class ClassWeights:
    w_benign: float
    w_indet: float
    w_malignant: float

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls(1.0, 1.0, 1.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.w_benign, self.w_indet, self.w_malignant], dtype=np.float64)

    def tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.as_array(), dtype=dtype)


def class_weights_from_counts(counts: Sequence[int]) -> ClassWeights:
    """w_j = total / (num_classes * count_j)."""
    counts = [int(c) for c in counts]
    if len(counts) != NUM_CLASSES:
        raise ValidationError(f"expected {NUM_CLASSES} class counts")
    empty = [ClassLabel(i).name for i, c in enumerate(counts) if c <= 0]
    if empty:
        raise EmptyClass(f"no training samples for {empty}")
    total = sum(counts)
    return ClassWeights(*(total / (NUM_CLASSES * c) for c in counts))


def compute_class_weights(train_records: Iterable[ImageRecord]) -> ClassWeights:
    counts = [0] * NUM_CLASSES
    for rec in train_records:
        if rec.split is not Split.TRAIN or rec.label is None:
            raise ValidationError(f"record {rec.id!r} is not a labeled TRAIN record")
        counts[int(rec.label)] += 1
    return class_weights_from_counts(counts)


# ---------------------------------------------------------------- loss


def weighted_cross_entropy(probabilities, labels: Sequence, weights: ClassWeights) -> float:
    """-(1/N) sum_i w_{y_i} log p_{i, y_i}, probabilities floored at 1e-12."""
    rows = [p.as_array() if isinstance(p, PredictionVector) else np.asarray(p, dtype=np.float64) for p in probabilities]
    probs = np.vstack(rows) if rows else np.empty((0, NUM_CLASSES))
    y = np.array([int(v) for v in labels], dtype=np.int64)
    if probs.ndim != 2 or probs.shape[1] != NUM_CLASSES or len(probs) != len(y) or len(y) == 0:
        raise ShapeMismatch(f"probabilities {probs.shape} vs {len(y)} labels")
    p_true = np.maximum(probs[np.arange(len(y)), y], PROB_FLOOR)
    return float(-np.mean(weights.as_array()[y] * np.log(p_true)))


def weighted_ce_from_logits(logits: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Differentiable form of :func:`weighted_cross_entropy` on raw logits."""
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    probs = F.softmax(logits, dim=1)
    p_true = probs.gather(1, targets.view(-1, 1)).squeeze(1).clamp_min(PROB_FLOOR)
    return -(weights.to(logits.dtype)[targets] * torch.log(p_true)).mean()


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 120
    weight_decay: float = 1e-3
    dropout_rate: float = 0.2
    max_epochs: int = 100
    patience: int = 10
    seed: int = 42
    backbone_name: str = "reference_cnn"
    backbone_kwargs: dict = field(default_factory=dict)
    eval_batch_size: int = 64

    def __post_init__(self):
        checks = {
            "learning_rate": (float, lambda v: v > 0),
            "batch_size": (int, lambda v: v >= 1),
            "weight_decay": (float, lambda v: v >= 0),
            "dropout_rate": (float, lambda v: 0 <= v < 1),
            "max_epochs": (int, lambda v: v >= 1),
            "patience": (int, lambda v: v >= 1),
            "seed": (int, lambda v: True),
            "eval_batch_size": (int, lambda v: v >= 1),
        }
        for key, (kind, ok) in checks.items():
            value = getattr(self, key)
            if isinstance(value, bool) or not isinstance(value, (int, float) if kind is float else int):
                raise ConfigError(f"train.{key}", f"expected {kind.__name__}, got {value!r}")
            if not ok(value):
                raise ConfigError(f"train.{key}", f"value {value!r} out of range")
        if not isinstance(self.backbone_name, str):
            raise ConfigError("train.backbone_name", "expected a string")

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "train") -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"{prefix}.{sorted(unknown)[0]}", "unknown key")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------- early stopping


class EarlyStopping:
    """Stop once the monitored loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def step(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch`` (1-based); return True to stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


# ---------------------------------------------------------------- data access


class RasterCache:
    """Model-input (224x224) rasters for augmented samples, cut on first use."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def get(self, sample) -> np.ndarray:
        arr = self._store.get(sample.key)
        if arr is None:
            arr = self._store[sample.key] = model_input_resize(sample.raster())
        return arr

    def __len__(self):
        return len(self._store)


@dataclass
class EvalSet:
    """Unaugmented full images already resized to model input."""

    ids: list[str]
    images: np.ndarray  # (N, 224, 224, 3) uint8
    labels: np.ndarray  # (N,) int

    def __len__(self):
        return len(self.ids)


def predict_logits(model: torch.nn.Module, images: np.ndarray, batch_size: int = 64, dtype=torch.float32) -> torch.Tensor:
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            outs.append(model(to_tensor(images[start : start + batch_size], dtype)))
    return torch.cat(outs) if outs else torch.empty(0, NUM_CLASSES)


def softmax64(logits: torch.Tensor) -> np.ndarray:
    return torch.softmax(logits.detach().to(torch.float64), dim=1).numpy()


def predict_proba(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    return softmax64(predict_logits(model, images, batch_size))


# ---------------------------------------------------------------- training


@dataclass
class TrainingReport:
    epochs: list[dict]
    best_epoch: int
    best_val_macro_f1: float
    stop_reason: str
    checkpoint: str | None
    wall_time: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, run_dir: Path) -> None:
        with open(run_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(run_dir / "epochs.csv", "w", newline="", encoding="utf-8") as fh:
            cols = ["epoch", "train_loss", "val_loss", "val_macro_f1"]
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(self.epochs)


Validator = Callable[[torch.nn.Module, int], tuple[float, float]]


def make_validator(val: EvalSet, weights: ClassWeights, batch_size: int = 64) -> Validator:
    """Returns ``(val_loss, val_macro_f1)`` for the current model."""

    def validate(model, epoch):
        logits = predict_logits(model, val.images, batch_size)
        w = weights.tensor()
        loss = float(weighted_ce_from_logits(logits, torch.from_numpy(val.labels), w))
        report = evaluate(val.labels, softmax64(logits))
        return loss, report.macro_f1

    return validate


def seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True, warn_only=True)


def fit(
    model: torch.nn.Module,
    params: Iterable[torch.nn.Parameter],
    config: TrainConfig,
    epoch_batches: Callable[[int], Iterable[tuple[torch.Tensor, torch.Tensor]]],
    weights: ClassWeights,
    validate: Validator,
    run_dir: Path | None = None,
) -> TrainingReport:
    """Generic Adam loop shared by backbone and aggregator training.

    ``epoch_batches(epoch)`` yields ``(inputs, targets)`` in delivery order.
    Checkpoint = best validation macro-F1; stopping = validation loss patience.
    """
    t0 = time.perf_counter()
    opt = torch.optim.Adam(params, lr=config.learning_rate, weight_decay=config.weight_decay)
    w = weights.tensor()
    stopper = EarlyStopping(config.patience)
    history: list[dict] = []
    best_f1, best_epoch, best_state = -1.0, 0, None
    stop_reason = "max_epochs"
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        total, count = 0.0, 0
        for inputs, targets in epoch_batches(epoch - 1):
            logits = model(inputs)
            loss = weighted_ce_from_logits(logits, targets, w.to(logits.dtype))
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss {loss.item()} at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(targets)
            count += len(targets)
        val_loss, val_f1 = validate(model, epoch)
        if not math.isfinite(val_loss):
            raise DivergedLoss(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / max(count, 1), "val_loss": val_loss, "val_macro_f1": val_f1})
        log.info("epoch %d train_loss %.4f val_loss %.4f val_f1 %.4f", epoch, history[-1]["train_loss"], val_loss, val_f1)
        if val_f1 > best_f1:
            best_f1, best_epoch = val_f1, epoch
            best_state = copy.deepcopy(model.state_dict())
        if stopper.step(epoch, val_loss):
            stop_reason = f"early_stopping(patience={config.patience})"
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.trained = True
    checkpoint = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoint = str(run_dir / "weights.bin")
        torch.save(model.state_dict(), checkpoint)
    return TrainingReport(history, best_epoch, best_f1, stop_reason, checkpoint, time.perf_counter() - t0)


def sample_batches(source: Callable[[int], EpochSchedule | Sequence], cache: RasterCache, batch_size: int):
    """Adapt a schedule source into tensor batches, preserving schedule order."""

    def epoch_batches(epoch):
        for batch in batch_iterator(source(epoch), batch_size):
            x = to_tensor([cache.get(s) for s in batch])
            y = torch.tensor([int(s.label) for s in batch], dtype=torch.long)
            yield x, y

    return epoch_batches


def train(
    config: TrainConfig,
    schedule_source: Callable[[int], EpochSchedule | Sequence],
    weights: ClassWeights,
    val: EvalSet,
    run_dir: Path | None = None,
    validate: Validator | None = None,
    cache: RasterCache | None = None,
) -> tuple[Backbone, TrainingReport]:
    """Train ``config.backbone_name`` on per-epoch schedules."""
    spec = get_spec(config.backbone_name)
    if len(val) == 0:
        raise EmptySplit("validation split is empty")
    if len(schedule_source(0)) == 0:
        raise EmptySplit("training schedule is empty")
    seed_everything(config.seed)
    model = build_backbone(spec.name, dropout=config.dropout_rate, **config.backbone_kwargs)
    cache = cache or RasterCache()
    validate = validate or make_validator(val, weights, config.eval_batch_size)
    report = fit(model, model.parameters(), config, sample_batches(schedule_source, cache, config.batch_size), weights, validate, run_dir)
    report.extra["optimizer"] = {"name": "Adam", "betas": [0.9, 0.999], "eps": 1e-8}
    if run_dir is not None:
        with open(run_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump({"train": config.to_dict(), "optimizer": report.extra["optimizer"]}, fh, indent=2)
        report.write(run_dir)
    return model, report


def load_backbone(run_dir: Path) -> tuple[Backbone, TrainConfig]:
    with open(Path(run_dir) / "config.json", encoding="utf-8") as fh:
        cfg = TrainConfig.from_dict(json.load(fh)["train"])
    model = build_backbone(cfg.backbone_name, dropout=cfg.dropout_rate, **cfg.backbone_kwargs)
    model.load_state_dict(torch.load(Path(run_dir) / "weights.bin", weights_only=True))
    model.eval()
    model.trained = True
    return model, cfg
