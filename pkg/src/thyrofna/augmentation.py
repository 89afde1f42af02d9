"""Region-driven x34 training augmentation.

Each TRAIN image yields one full image (A), one box-overlay image (B), eight
cluster crops (C), twelve grid tiles of the overlay (D) and twelve grid tiles
of the original (E). Samples store geometry only; pixels are cut on demand.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ClassLabel, ImageRecord, Split, canonical_resize, load_image, save_image
from .errors import InvalidCanonicalSize, SplitViolation
from .proposals import FRAME_H, FRAME_W, RegionProposal, _check_canonical, rank_proposals

TILE = 256
GRID_COLS, GRID_ROWS = FRAME_W // TILE, FRAME_H // TILE  # 4 x 3
NUM_TILES = GRID_COLS * GRID_ROWS
TOP_K = 8
OUTLINE_PX = 4
OUTLINE_RGB = (255, 0, 0)

# Fallback crops for Set C when the proposer finds fewer than eight clusters.
SUPPLEMENTARY_POOL: tuple[tuple[int, int, int, int], ...] = tuple(
    [(x, y, 512, 512) for y in (0, 256) for x in (0, 256, 512)]
    + [(0, 0, 768, 768), (256, 0, 768, 768)]
)

Box = tuple[int, int, int, int]


class SetTag(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"


SET_MULTIPLICITY = {SetTag.A: 1, SetTag.B: 1, SetTag.C: 8, SetTag.D: 12, SetTag.E: 12}
EXPANSION_FACTOR = sum(SET_MULTIPLICITY.values())  # 34

FULL_FRAME: Box = (0, 0, FRAME_W, FRAME_H)


def grid_geometry() -> list[Box]:
    """Row-major 256x256 tiles covering the 1024x768 frame."""
    return [(c * TILE, r * TILE, TILE, TILE) for r in range(GRID_ROWS) for c in range(GRID_COLS)]


def crop(image: np.ndarray, box: Box) -> np.ndarray:
    x, y, w, h = box
    return image[y : y + h, x : x + w]


def generate_grid(image) -> list[np.ndarray]:
    arr = _check_canonical(image)
    return [crop(arr, b).copy() for b in grid_geometry()]


def reassemble_grid(tiles: Sequence[np.ndarray]) -> np.ndarray:
    if len(tiles) != NUM_TILES:
        raise InvalidCanonicalSize(f"need {NUM_TILES} tiles, got {len(tiles)}")
    rows = [np.concatenate(tiles[r * GRID_COLS : (r + 1) * GRID_COLS], axis=1) for r in range(GRID_ROWS)]
    return np.concatenate(rows, axis=0)


def draw_outline(image: np.ndarray, box: Box, thickness: int = OUTLINE_PX, color=OUTLINE_RGB) -> None:
    """Draw an unfilled rectangle in place, inside the box edges."""
    x, y, w, h = box
    t = min(thickness, w // 2, h // 2)
    c = np.asarray(color, dtype=np.uint8)
    image[y : y + t, x : x + w] = c
    image[y + h - t : y + h, x : x + w] = c
    image[y : y + h, x : x + t] = c
    image[y : y + h, x + w - t : x + w] = c


def top_proposals(proposals: Sequence[RegionProposal], k: int = TOP_K) -> list[RegionProposal]:
    return rank_proposals(proposals)[:k]


def generate_set_b(image, proposals: Sequence[RegionProposal]) -> np.ndarray:
    out = _check_canonical(image).copy()
    for p in top_proposals(proposals):
        draw_outline(out, p.box)
    return out


def set_c_geometry(proposals: Sequence[RegionProposal], seed: int) -> list[Box]:
    boxes = [p.box for p in top_proposals(proposals)]
    missing = TOP_K - len(boxes)
    if missing:
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(SUPPLEMENTARY_POOL), size=missing, replace=False)
        boxes.extend(SUPPLEMENTARY_POOL[int(i)] for i in picks)
    return boxes


def generate_set_c(image, proposals: Sequence[RegionProposal], seed: int) -> list[np.ndarray]:
    arr = _check_canonical(image)
    return [crop(arr, b).copy() for b in set_c_geometry(proposals, seed)]


def record_seed(global_seed: int, record_id: str) -> int:
    """Per-record seed independent of processing order."""
    digest = hashlib.sha256(f"{global_seed}:{record_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class RecordImages:
    """Lazily loaded canonical image and its Set B overlay for one record."""

    def __init__(self, record: ImageRecord, proposals: Sequence[RegionProposal], image: np.ndarray | None = None):
        self.record = record
        self.proposals = list(proposals)
        self._image = None if image is None else _check_canonical(image)

    @property
    def original(self) -> np.ndarray:
        if self._image is None:
            self._image = canonical_resize(load_image(self.record.path))
        return self._image

    @cached_property
    def overlay(self) -> np.ndarray:
        return generate_set_b(self.original, self.proposals)

    def release(self) -> None:
        self._image = None
        self.__dict__.pop("overlay", None)


@dataclass(frozen=True)
class AugmentedSample:
    source_id: str
    set_tag: SetTag
    index: int
    geometry: Box | None  # None means the full canonical frame
    label: ClassLabel
    from_overlay: bool
    split: Split = Split.TRAIN
    images: RecordImages | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> str:
        return f"{self.source_id}/{self.set_tag.value}_{self.index}"

    @property
    def box(self) -> Box:
        return FULL_FRAME if self.geometry is None else self.geometry

    def raster(self) -> np.ndarray:
        if self.images is None:
            raise ValueError(f"sample {self.key} has no image source attached")
        src = self.images.overlay if self.from_overlay else self.images.original
        return crop(src, self.box)

    def geometry_dict(self) -> dict:
        return {
            "set_tag": self.set_tag.value,
            "index": self.index,
            "geometry": "FULL" if self.geometry is None else list(self.geometry),
            "source": "overlay" if self.from_overlay else "original",
            "label": self.label.name,
        }


def augment_record(
    record: ImageRecord,
    proposals: Sequence[RegionProposal],
    seed: int,
    image: np.ndarray | None = None,
) -> list[AugmentedSample]:
    """Expand one TRAIN record into its 34 augmented samples (A, B, C x8, D x12, E x12)."""
    if record.split is not Split.TRAIN:
        raise SplitViolation(f"record {record.id!r} is {record.split.value or 'UNSPLIT'}; only TRAIN is augmented")
    images = RecordImages(record, proposals, image)
    label = record.label

    def make(tag, idx, geom, overlay):
        return AugmentedSample(record.id, tag, idx, geom, label, overlay, Split.TRAIN, images)

    samples = [make(SetTag.A, 0, None, False), make(SetTag.B, 0, None, True)]
    samples += [make(SetTag.C, i, b, False) for i, b in enumerate(set_c_geometry(proposals, record_seed(seed, record.id)))]
    grid = grid_geometry()
    samples += [make(SetTag.D, i, b, True) for i, b in enumerate(grid)]
    samples += [make(SetTag.E, i, b, False) for i, b in enumerate(grid)]
    return samples


def export_augmented(samples: Sequence[AugmentedSample], out_dir) -> Path:
    """Write ``aug/<record_id>/<set_tag>_<index>.png`` plus ``geometry.json``."""
    root = Path(out_dir) / "aug"
    by_record: dict[str, list[AugmentedSample]] = {}
    for s in samples:
        by_record.setdefault(s.source_id, []).append(s)
    for rec_id, group in by_record.items():
        d = root / rec_id
        d.mkdir(parents=True, exist_ok=True)
        for s in group:
            save_image(s.raster(), d / f"{s.set_tag.value}_{s.index}.png")
        with open(d / "geometry.json", "w", encoding="utf-8") as fh:
            json.dump([s.geometry_dict() for s in group], fh, indent=2)
    return root
