"""Confusion matrices, F1, one-vs-rest AUC and probability-space export."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import NUM_CLASSES, ClassLabel, PredictionVector
from .errors import EmptyInput, IoFailure, LengthMismatch, SingleClassInput


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValueError("confusion counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def column_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def tolist(self) -> list[list[int]]:
        return self.counts.tolist()


def _labels(values) -> np.ndarray:
    return np.array([int(v) for v in values], dtype=np.int64)


def confusion_from_predictions(truths: Sequence, preds: Sequence) -> ConfusionMatrix:
    t, p = _labels(truths), _labels(preds)
    if len(t) != len(p):
        raise LengthMismatch(f"{len(t)} truths vs {len(p)} predictions")
    if len(t) == 0:
        raise EmptyInput("no predictions to score")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def f1_scores(matrix: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class F1 = 2TP / (2TP + FP + FN) and their unweighted mean.

    A class with no true and no predicted instances gets F1 = 0 and a warning.
    """
    c = matrix.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.zeros(NUM_CLASSES)
    ok = denom > 0
    f1[ok] = 2 * tp[ok] / denom[ok]
    if not ok.all():
        names = [ClassLabel(i).name for i in np.flatnonzero(~ok)]
        warnings.warn(f"F1 undefined for classes {names} (no instances); set to 0", RuntimeWarning, stacklevel=2)
    return f1, float(f1.mean())


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg) + 0.5 P(tie)."""
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassInput("AUC needs both positive and negative samples")
    r = midranks(scores)
    u = r[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _prob_matrix(probabilities) -> np.ndarray:
    rows = [p.as_array() if isinstance(p, PredictionVector) else np.asarray(p, dtype=np.float64) for p in probabilities]
    if not rows:
        raise EmptyInput("no probabilities")
    return np.vstack(rows)


def ovr_auc(truths: Sequence, probabilities) -> np.ndarray:
    t = _labels(truths)
    probs = _prob_matrix(probabilities)
    if len(t) != len(probs):
        raise LengthMismatch(f"{len(t)} truths vs {len(probs)} probability rows")
    missing = [ClassLabel(k).name for k in range(NUM_CLASSES) if not np.any(t == k)]
    if missing:
        raise SingleClassInput(f"classes absent from truths: {missing}")
    return np.array([binary_auc(probs[:, k], t == k) for k in range(NUM_CLASSES)])


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    per_class_f1: np.ndarray
    macro_f1: float
    per_class_auc: np.ndarray | None
    n: int

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion.counts) / self.n)

    def to_dict(self) -> dict:
        names = [c.name for c in ClassLabel]
        out = {
            "n": self.n,
            "confusion": self.confusion.tolist(),
            "per_class_f1": {k: float(v) for k, v in zip(names, self.per_class_f1)},
            "macro_f1": self.macro_f1,
            "per_class_auc": None if self.per_class_auc is None else {k: float(v) for k, v in zip(names, self.per_class_auc)},
            "accuracy": self.accuracy,
        }
        return out


def evaluate(truths: Sequence, probabilities) -> EvalReport:
    """Full report; AUC is left empty when a class is absent from ``truths``."""
    probs = _prob_matrix(probabilities)
    preds = [PredictionVector.from_array(p).decision() for p in probs]
    cm = confusion_from_predictions(truths, preds)
    per_class, macro = f1_scores(cm)
    try:
        auc = ovr_auc(truths, probs)
    except SingleClassInput:
        auc = None
    return EvalReport(cm, per_class, macro, auc, cm.n)


def pca_2d(points: np.ndarray) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    proj = centered @ vt[:2].T
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    return proj


def export_latent(probabilities, truths, path, ids: Sequence[str] | None = None, pca: bool = False) -> Path:
    """Write ``id,p_benign,p_indet,p_malignant,label`` (+ ``pc1,pc2``) rows."""
    probs = _prob_matrix(probabilities)
    n = len(probs)
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    truths = [None] * n if truths is None else list(truths)
    if len(ids) != n or len(truths) != n:
        raise LengthMismatch("ids, truths and probabilities must align")
    proj = pca_2d(probs) if pca else None
    header = ["id", "p_benign", "p_indet", "p_malignant", "label"] + (["pc1", "pc2"] if pca else [])
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(n):
                label = "" if truths[i] is None else ClassLabel(int(truths[i])).name
                row = [ids[i], *(f"{v:.10f}" for v in probs[i]), label]
                if proj is not None:
                    row += [f"{v:.10f}" for v in proj[i]]
                w.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
