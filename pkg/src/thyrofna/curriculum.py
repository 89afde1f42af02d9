"""Per-epoch curriculum ordering: all E tiles, then D, C, B, and A last."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .augmentation import AugmentedSample, SetTag
from .core import Split
from .errors import MixedSplit, ValidationError

CURRICULUM_ORDER = (SetTag.E, SetTag.D, SetTag.C, SetTag.B, SetTag.A)
_TAG_SALT = {tag: i for i, tag in enumerate(CURRICULUM_ORDER)}


@dataclass(frozen=True)
class EpochSchedule:
    samples: tuple[AugmentedSample, ...]
    epoch_index: int
    seed: int

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def tags(self) -> list[SetTag]:
        return [s.set_tag for s in self.samples]

    def to_records(self) -> list[dict]:
        return [
            {"epoch": self.epoch_index, "position": i, "source_id": s.source_id, "set_tag": s.set_tag.value}
            for i, s in enumerate(self.samples)
        ]

    def to_json(self) -> str:
        return json.dumps(self.to_records())


def _shuffled(block: list, rng: np.random.Generator) -> list:
    block.sort(key=lambda s: (s.source_id, s.index))
    return [block[i] for i in rng.permutation(len(block))]


def build_epoch(samples: Sequence[AugmentedSample], epoch_index: int, seed: int) -> EpochSchedule:
    """Order samples in blocks E, D, C, B, A with a seeded shuffle inside each block."""
    blocks: dict[SetTag, list[AugmentedSample]] = {tag: [] for tag in CURRICULUM_ORDER}
    for s in samples:
        if s.split is not Split.TRAIN:
            raise MixedSplit(f"sample {s.key} comes from a {s.split.value or 'UNSPLIT'} record")
        blocks[s.set_tag].append(s)
    ordered: list[AugmentedSample] = []
    for tag in CURRICULUM_ORDER:
        rng = np.random.default_rng([seed, epoch_index, _TAG_SALT[tag]])
        ordered.extend(_shuffled(blocks[tag], rng))
    return EpochSchedule(tuple(ordered), epoch_index, seed)


def build_shuffled_epoch(samples: Sequence[AugmentedSample], epoch_index: int, seed: int) -> EpochSchedule:
    """Plain shuffle with no block structure (the no-augmentation baseline)."""
    for s in samples:
        if s.split is not Split.TRAIN:
            raise MixedSplit(f"sample {s.key} comes from a {s.split.value or 'UNSPLIT'} record")
    rng = np.random.default_rng([seed, epoch_index, len(CURRICULUM_ORDER)])
    return EpochSchedule(tuple(_shuffled(list(samples), rng)), epoch_index, seed)


def batch_iterator(schedule: EpochSchedule | Sequence, batch_size: int) -> Iterator[list]:
    """Consecutive chunks in schedule order; the last one may be short."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    items = list(schedule)
    for start in range(0, len(items), batch_size):
        yield items[start : start + batch_size]
