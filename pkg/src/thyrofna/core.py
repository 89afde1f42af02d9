"""Domain types, manifest I/O, stratified splitting and canonical resizing."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import (
    DuplicateId,
    EmptyImage,
    MalformedManifest,
    MissingFile,
    UnlabeledRecord,
    ValidationError,
)

CANONICAL_SIZE = (1024, 768)  # (width, height)
MODEL_INPUT_SIZE = (224, 224)
RESIZE_METHOD = "bilinear"  # PIL bilinear widens its support on downscale (antialiased)

MANIFEST_HEADER = ["id", "path", "label", "split"]


class ClassLabel(enum.IntEnum):
    BENIGN = 0
    INDET_SUS = 1
    MALIGNANT = 2

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown class label {text!r}") from None


NUM_CLASSES = len(ClassLabel)


class Split(enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"
    EXTERNAL = "EXTERNAL"
    UNSPLIT = ""


LABELED_SPLITS = frozenset({Split.TRAIN, Split.VAL, Split.TEST})


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: Path
    label: ClassLabel | None = None
    split: Split = Split.UNSPLIT
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("record id must be non-empty")
        if self.split in LABELED_SPLITS and self.label is None:
            raise UnlabeledRecord(f"record {self.id!r} has split {self.split.value} but no label")


@dataclass(frozen=True)
class PredictionVector:
    p_benign: float
    p_indet: float
    p_malignant: float

    def __post_init__(self):
        probs = self.as_tuple()
        if any(not (0.0 <= p <= 1.0) or math.isnan(p) for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1], got {probs}")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValueError(f"probabilities must sum to 1, got {sum(probs)!r}")

    @classmethod
    def from_array(cls, values) -> "PredictionVector":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.shape != (NUM_CLASSES,):
            raise ValueError(f"expected {NUM_CLASSES} probabilities, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p_benign, self.p_indet, self.p_malignant)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    def decision(self) -> ClassLabel:
        # np.argmax returns the first maximum, i.e. the lowest ordinal on ties
        return ClassLabel(int(np.argmax(self.as_array())))


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 42
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValidationError(f"split ratios must be three positive fractions, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError(f"split ratios must sum to 1, got {sum(self.ratios)!r}")


# ---------------------------------------------------------------- manifests


def load_manifest(path, check_files: bool = True) -> list[ImageRecord]:
    """Read a manifest CSV (``id,path,label,split``).

    Paths are resolved relative to the manifest's directory. Image sizes are
    read from file headers when ``check_files`` is set.
    """
    path = Path(path)
    base = path.parent
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_HEADER:
            raise MalformedManifest(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise MalformedManifest(f"{path}:{lineno}: expected 4 columns")
            rec_id = row["id"].strip()
            if rec_id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate id {rec_id!r}")
            seen.add(rec_id)
            try:
                label = ClassLabel.parse(row["label"]) if row["label"].strip() else None
                split = Split(row["split"].strip().upper())
            except ValueError as exc:
                raise MalformedManifest(f"{path}:{lineno}: {exc}") from None
            img_path = (base / row["path"].strip()).resolve()
            width = height = None
            if check_files:
                if not img_path.is_file():
                    raise MissingFile(rec_id, img_path)
                with Image.open(img_path) as im:
                    width, height = im.size
            try:
                records.append(ImageRecord(rec_id, img_path, label, split, width, height))
            except ValidationError as exc:
                raise MalformedManifest(f"{path}:{lineno}: {exc}") from None
    return records


def write_manifest(records: Iterable[ImageRecord], path) -> Path:
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            p = Path(rec.path)
            try:
                rel = p.resolve().relative_to(base)
            except ValueError:
                rel = p
            writer.writerow([rec.id, rel.as_posix(), rec.label.name if rec.label is not None else "", rec.split.value])
    return path


# ---------------------------------------------------------------- splitting


def largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    """Apportion ``total`` items by ``ratios`` with the largest-remainder rule.

    Ties in the fractional part go to the earlier position.
    """
    quotas = [round(total * r, 9) for r in ratios]
    counts = [math.floor(q) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_dataset(records: Sequence[ImageRecord], spec: SplitSpec = SplitSpec()) -> list[ImageRecord]:
    """Assign TRAIN/VAL/TEST stratified by label.

    Records are returned in input order. Within each class the records are
    ordered by id and permuted with a generator seeded by ``(seed, class)``,
    so the result does not depend on manifest row order.
    """
    by_class: dict[ClassLabel, list[ImageRecord]] = {c: [] for c in ClassLabel}
    for rec in records:
        if rec.label is None:
            raise UnlabeledRecord(f"record {rec.id!r} has no label")
        if rec.split is not Split.UNSPLIT:
            raise ValidationError(f"record {rec.id!r} already assigned to {rec.split.value}")
        by_class[rec.label].append(rec)

    assignment: dict[str, Split] = {}
    for cls, members in by_class.items():
        members = sorted(members, key=lambda r: r.id)
        rng = np.random.default_rng([spec.seed, int(cls)])
        perm = rng.permutation(len(members))
        n_train, n_val, _ = largest_remainder(len(members), spec.ratios)
        for rank, idx in enumerate(perm):
            if rank < n_train:
                split = Split.TRAIN
            elif rank < n_train + n_val:
                split = Split.VAL
            else:
                split = Split.TEST
            assignment[members[idx].id] = split
    return [replace(rec, split=assignment[rec.id]) for rec in records]


# ---------------------------------------------------------------- rasters


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(image: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PNG")


def as_rgb(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.size == 0 or arr.ndim < 2 or 0 in arr.shape[:2]:
        raise EmptyImage("image has no pixels")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3]
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return arr


def resize(image, size: tuple[int, int], provenance: dict | None = None) -> np.ndarray:
    """Resize to ``size`` = (width, height); identity when already that size."""
    arr = as_rgb(image)
    h, w = arr.shape[:2]
    if provenance is not None:
        provenance.setdefault("resize", []).append(
            {"from": [w, h], "to": list(size), "method": RESIZE_METHOD}
        )
    if (w, h) == tuple(size):
        return arr
    out = Image.fromarray(arr).resize(size, Image.Resampling.BILINEAR)
    return np.asarray(out)


def canonical_resize(image, provenance: dict | None = None) -> np.ndarray:
    return resize(image, CANONICAL_SIZE, provenance)


def model_input_resize(image, provenance: dict | None = None) -> np.ndarray:
    return resize(image, MODEL_INPUT_SIZE, provenance)
