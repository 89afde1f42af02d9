"""End-to-end orchestration: split, propose, augment, schedule, train, evaluate."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .aggregator import PremiumClassifier, token_bank, train_premium
from .augmentation import AugmentedSample, SetTag, augment_record
from .config import PipelineConfig
from .core import ImageRecord, Split, canonical_resize, load_image, model_input_resize, split_dataset
from .curriculum import build_epoch, build_shuffled_epoch
from .errors import EmptySplit, ValidationError
from .evaluation import EvalReport, evaluate
from .proposals import make_proposer
from .training import (
    ClassWeights,
    EvalSet,
    RasterCache,
    TrainConfig,
    TrainingReport,
    compute_class_weights,
    predict_proba,
    softmax64,
    train,
)

log = logging.getLogger(__name__)


def ensure_split(records: Sequence[ImageRecord], config: PipelineConfig) -> list[ImageRecord]:
    """Split UNSPLIT labeled records; already-split manifests pass through."""
    unsplit = [r for r in records if r.split is Split.UNSPLIT]
    if not unsplit:
        return list(records)
    if len(unsplit) != len(records):
        raise ValidationError("manifest mixes split and unsplit records")
    return split_dataset(records, config.split)


def canonical(record: ImageRecord) -> np.ndarray:
    return canonical_resize(load_image(record.path))


def load_eval_set(records: Sequence[ImageRecord]) -> EvalSet:
    images = [model_input_resize(canonical(r)) for r in records]
    return EvalSet(
        [r.id for r in records],
        np.stack(images) if images else np.empty((0, 224, 224, 3), np.uint8),
        np.array([int(r.label) for r in records], dtype=np.int64),
    )


@dataclass
class PreparedData:
    records: list[ImageRecord]
    samples: list[AugmentedSample]
    cache: RasterCache
    val: EvalSet
    test: EvalSet
    proposals: dict = field(default_factory=dict)

    def by_split(self, split: Split) -> list[ImageRecord]:
        return [r for r in self.records if r.split is split]


def full_image_samples(records: Sequence[ImageRecord]) -> list[AugmentedSample]:
    """Set A only: the unaugmented training condition."""
    return [AugmentedSample(r.id, SetTag.A, 0, None, r.label, False) for r in records]


def prepare(records: Sequence[ImageRecord], config: PipelineConfig, augment: bool | None = None) -> PreparedData:
    """Propose and augment TRAIN records, pre-rendering every sample at 224 px.

    Each record's canonical image is released as soon as its samples are
    rendered, so peak memory is the rendered cache.
    """
    augment = config.augment if augment is None else augment
    records = ensure_split(records, config)
    train_records = [r for r in records if r.split is Split.TRAIN]
    proposer = make_proposer(config.proposer)
    cache = RasterCache()
    samples: list[AugmentedSample] = []
    proposals = {}
    for rec in train_records:
        image = canonical(rec)
        if augment:
            props = proposer.propose(image, rec.id)
            proposals[rec.id] = props
            rec_samples = augment_record(rec, props, config.augment_seed, image=image)
        else:
            rec_samples = [replace(s, images=None) for s in full_image_samples([rec])]
            cache._store[rec_samples[0].key] = model_input_resize(image)
        for s in rec_samples:
            if s.images is not None:
                cache.get(s)
        if rec_samples and rec_samples[0].images is not None:
            rec_samples[0].images.release()
        samples.extend(rec_samples)
    return PreparedData(
        records,
        samples,
        cache,
        load_eval_set([r for r in records if r.split is Split.VAL]),
        load_eval_set([r for r in records if r.split is Split.TEST]),
        proposals,
    )


def schedule_source(samples: Sequence[AugmentedSample], curriculum: bool, seed: int):
    build = build_epoch if curriculum else build_shuffled_epoch
    return lambda epoch: build(samples, epoch, seed)


def evaluate_backbone(model, data: EvalSet) -> tuple[EvalReport, np.ndarray]:
    probs = predict_proba(model, data.images)
    return evaluate(data.labels, probs), probs


def write_json(obj, path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
    return path


def run_basic(config: PipelineConfig, data: PreparedData, run_dir: Path | None, train_config: TrainConfig | None = None, curriculum: bool | None = None):
    train_config = train_config or config.train
    curriculum = config.curriculum if curriculum is None else curriculum
    weights = compute_class_weights(data.by_split(Split.TRAIN))
    model, report = train(
        train_config,
        schedule_source(data.samples, curriculum, config.schedule_seed),
        weights,
        data.val,
        run_dir=run_dir,
        cache=data.cache,
    )
    if len(data.test) == 0:
        raise EmptySplit("test split is empty")
    eval_report, _ = evaluate_backbone(model, data.test)
    if run_dir is not None:
        write_json(eval_report.to_dict(), run_dir / "eval.json")
        write_json({"class_weights": weights.as_array().tolist(), "train_samples_per_epoch": len(data.samples)}, run_dir / "data.json")
    return model, report, eval_report


def _images(records):
    for r in records:
        yield canonical(r)


def run_premium(config: PipelineConfig, data: PreparedData, base_run: Path, run_dir: Path | None):
    weights = compute_class_weights(data.by_split(Split.TRAIN))
    train_recs, val_recs, test_recs = (data.by_split(s) for s in (Split.TRAIN, Split.VAL, Split.TEST))
    clf, report = train_premium(
        base_run,
        config.aggregator,
        config.aggregator_train,
        _images(train_recs),
        [r.label for r in train_recs],
        _images(val_recs),
        [r.label for r in val_recs],
        weights,
        run_dir=run_dir,
    )
    probs = premium_proba(clf, _images(test_recs))
    eval_report = evaluate([r.label for r in test_recs], probs)
    if run_dir is not None:
        write_json(eval_report.to_dict(), run_dir / "eval.json")
    return clf, report, eval_report


def premium_proba(clf: PremiumClassifier, images) -> np.ndarray:
    raw = token_bank(images, clf.backbone, clf.aggregator.config.token_source)
    clf.aggregator.eval()
    with torch.no_grad():
        return softmax64(clf.aggregator(raw))


@dataclass
class ComparisonRow:
    backbone: str
    f1_no_aug: float
    f1_aug: float
    samples_per_epoch_no_aug: int
    samples_per_epoch_aug: int

    @property
    def delta(self) -> float:
        return self.f1_aug - self.f1_no_aug


def run_model_comparison(
    configs: Sequence[TrainConfig],
    records: Sequence[ImageRecord],
    pipeline_config: PipelineConfig,
    with_and_without_augmentation: bool = True,
    out_dir: Path | None = None,
) -> list[ComparisonRow]:
    """Test macro-F1 per backbone without augmentation (Set A, plain shuffle)
    and with the full augmentation + curriculum pipeline."""
    if not configs:
        raise ValueError("need at least one TrainConfig")
    aug = prepare(records, pipeline_config, augment=True)
    plain = prepare(aug.records, pipeline_config, augment=False) if with_and_without_augmentation else None
    rows = []
    for cfg in configs:
        f1_plain = float("nan")
        n_plain = 0
        if plain is not None:
            _, _, rep = run_basic(pipeline_config, plain, None, cfg, curriculum=False)
            f1_plain, n_plain = rep.macro_f1, len(plain.samples)
        _, _, rep = run_basic(pipeline_config, aug, None, cfg, curriculum=True)
        rows.append(ComparisonRow(cfg.backbone_name, f1_plain, rep.macro_f1, n_plain, len(aug.samples)))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_comparison(rows, out_dir / "comparison.csv")
    return rows


def write_comparison(rows: Sequence[ComparisonRow], path: Path) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model,f1_no_aug,f1_aug,delta\n")
        for r in rows:
            fh.write(f"{r.backbone},{r.f1_no_aug:.4f},{r.f1_aug:.4f},{r.delta:.4f}\n")
    return path
