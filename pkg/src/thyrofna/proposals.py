"""Cell-cluster region proposals.

The default backend is a deterministic density heuristic: dark (stained)
pixels are found with a local-mean adaptive threshold, grouped into
8-connected components, and every component whose area reaches
``min_cluster_area`` becomes a box scored by its area relative to the largest
component. Real detector output can be supplied instead through a proposal
CSV (``image_id,score,x,y,w,h``).
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .core import CANONICAL_SIZE, as_rgb
from .errors import InvalidCanonicalSize, MalformedProposalFile, OutOfBoundsBox, ValidationError

MIN_BOX_SIDE = 32
FRAME_W, FRAME_H = CANONICAL_SIZE


@dataclass(frozen=True)
class RegionProposal:
    x: int
    y: int
    w: int
    h: int
    score: float

    def __post_init__(self):
        if self.w < MIN_BOX_SIDE or self.h < MIN_BOX_SIDE:
            raise OutOfBoundsBox(f"box {self.box} smaller than {MIN_BOX_SIDE} px")
        if self.x < 0 or self.y < 0 or self.x + self.w > FRAME_W or self.y + self.h > FRAME_H:
            raise OutOfBoundsBox(f"box {self.box} outside the {FRAME_W}x{FRAME_H} frame")
        if not 0.0 <= self.score <= 1.0:
            raise OutOfBoundsBox(f"score {self.score} outside [0, 1]")

    @property
    def box(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)

    @property
    def area(self) -> int:
        return self.w * self.h


def sort_key(p: RegionProposal):
    return (-p.score, -p.area, p.x, p.y)


def rank_proposals(proposals: Sequence[RegionProposal]) -> list[RegionProposal]:
    """Total order used everywhere: score desc, area desc, then x, then y."""
    return sorted(proposals, key=sort_key)


class Backend(enum.Enum):
    DENSITY_DEFAULT = "DENSITY_DEFAULT"
    EXTERNAL_FILE = "EXTERNAL_FILE"


@dataclass(frozen=True)
class ProposerConfig:
    backend: Backend = Backend.DENSITY_DEFAULT
    block_size: int = 255  # side of the local-mean window, odd
    offset: float = 20.0  # pixel is "dark" when this far below the local mean
    min_cluster_area: int = 4096  # stands in for the >=10-cell cluster criterion
    margin: int = 8
    proposal_file: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.block_size < 3 or self.block_size % 2 == 0:
            raise ValidationError("block_size must be an odd integer >= 3")
        if self.offset <= 0 or self.min_cluster_area <= 0 or self.margin < 0:
            raise ValidationError("proposer parameters must be positive")
        if self.backend is Backend.EXTERNAL_FILE and self.proposal_file is None:
            raise ValidationError("EXTERNAL_FILE backend needs proposal_file")


def _check_canonical(image) -> np.ndarray:
    arr = as_rgb(image)
    if arr.shape[:2] != (FRAME_H, FRAME_W):
        raise InvalidCanonicalSize(
            f"expected {FRAME_W}x{FRAME_H} canonical image, got {arr.shape[1]}x{arr.shape[0]}"
        )
    return arr


def to_gray(image: np.ndarray) -> np.ndarray:
    rgb = image.astype(np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def local_mean(gray: np.ndarray, block_size: int) -> np.ndarray:
    """Box-filter mean with edge replication, via an integral image."""
    r = block_size // 2
    padded = np.pad(gray, r + 1, mode="edge")
    ii = padded.cumsum(0).cumsum(1)
    H, W = gray.shape
    k = block_size
    total = ii[k : k + H, k : k + W] - ii[0:H, k : k + W] - ii[k : k + H, 0:W] + ii[0:H, 0:W]
    return total / (k * k)


def dark_mask(image: np.ndarray, config: ProposerConfig) -> np.ndarray:
    gray = to_gray(image)
    return (gray < local_mean(gray, config.block_size) - config.offset).astype(np.uint8)


def boxes_from_mask(mask: np.ndarray, config: ProposerConfig) -> list[RegionProposal]:
    _, stats = _kernels.label_components(np.ascontiguousarray(mask, dtype=np.uint8))
    keep = stats[stats[:, 0] >= config.min_cluster_area]
    if len(keep) == 0:
        return []
    largest = float(keep[:, 0].max())
    H, W = mask.shape
    out = []
    for area, x0, y0, x1, y1 in keep.tolist():
        x0 = max(0, x0 - config.margin)
        y0 = max(0, y0 - config.margin)
        x1 = min(W, x1 + config.margin)
        y1 = min(H, y1 + config.margin)
        if x1 - x0 < MIN_BOX_SIDE or y1 - y0 < MIN_BOX_SIDE:
            continue
        out.append(RegionProposal(x0, y0, x1 - x0, y1 - y0, area / largest))
    return rank_proposals(out)


class RegionProposer(Protocol):
    def propose(self, image: np.ndarray, image_id: str | None = None) -> list[RegionProposal]: ...


class DensityProposer:
    def __init__(self, config: ProposerConfig = ProposerConfig()):
        self.config = config

    def propose(self, image, image_id=None):
        arr = _check_canonical(image)
        return boxes_from_mask(dark_mask(arr, self.config), self.config)


class ExternalProposer:
    """Serves precomputed detector boxes keyed by image id."""

    def __init__(self, table: dict[str, list[RegionProposal]]):
        self.table = table

    @classmethod
    def from_file(cls, path) -> "ExternalProposer":
        return cls(load_external_proposals(path))

    def propose(self, image, image_id=None):
        _check_canonical(image)
        if image_id is None:
            raise ValidationError("external proposals are looked up by image id")
        return list(self.table.get(image_id, []))


def make_proposer(config: ProposerConfig) -> RegionProposer:
    if config.backend is Backend.EXTERNAL_FILE:
        return ExternalProposer.from_file(config.proposal_file)
    return DensityProposer(config)


def propose_regions(image, config: ProposerConfig = ProposerConfig(), image_id: str | None = None) -> list[RegionProposal]:
    return make_proposer(config).propose(image, image_id)


def load_external_proposals(path) -> dict[str, list[RegionProposal]]:
    """Parse ``image_id,score,x,y,w,h`` rows (header optional)."""
    table: dict[str, list[RegionProposal]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == "image_id":
                continue
            if len(row) != 6:
                raise MalformedProposalFile(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                score = float(row[1])
                x, y, w, h = (int(v) for v in row[2:])
            except ValueError as exc:
                raise MalformedProposalFile(f"{path}:{lineno}: {exc}") from None
            try:
                prop = RegionProposal(x, y, w, h, score)
            except OutOfBoundsBox as exc:
                raise OutOfBoundsBox(f"{path}:{lineno}: {exc}") from None
            table.setdefault(row[0].strip(), []).append(prop)
    return {k: rank_proposals(v) for k, v in table.items()}


def write_external_proposals(table: dict[str, Sequence[RegionProposal]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "score", "x", "y", "w", "h"])
        for image_id, props in table.items():
            for p in props:
                writer.writerow([image_id, repr(p.score), p.x, p.y, p.w, p.h])
    return path
