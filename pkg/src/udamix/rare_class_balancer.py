"""Rare-class identification and the FIFO donor pool used to oversample
rare instances during source-to-target mixing.

The rare class of a category group is the one with the smallest
instance share. Images containing it are offered to a bounded FIFO pool
(only their rare-class annotations are retained); when a donor image
lacks the rare class, half of the pool (floor, uniform without
replacement) is injected as extra paste material.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .dataset_io import CLASS_NAMES, Dataset, ImageRecord, InstanceAnnotation

DEFAULT_POOL_CAPACITY = 10


@dataclass(frozen=True)
class PoolEntry:
    """A donor sample: an image reference plus its rare-class labels."""

    image: Any
    annotations: tuple[InstanceAnnotation, ...]


@dataclass(frozen=True)
class RarePool:
    """FIFO pool of rare-class donor samples, oldest entry first."""

    capacity: int = DEFAULT_POOL_CAPACITY
    entries: tuple[PoolEntry, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("pool capacity must be >= 1")
        if len(self.entries) > self.capacity:
            raise ValueError("pool over capacity")

    def __len__(self) -> int:
        return len(self.entries)


def identify_rare(stats: dict[str, dict[int, float]]) -> dict[str, int]:
    """Class with the minimal share per group; ties break to the lowest id."""
    rare = {}
    for group_name, shares in stats.items():
        if not shares:
            raise ValueError(f"group {group_name!r} has no instances")
        rare[group_name] = min(shares, key=lambda c: (shares[c], c))
    return rare


def pool_offer(
    pool: RarePool,
    sample: tuple[Any, Sequence[InstanceAnnotation]],
    rare: int,
) -> RarePool:
    """Append the sample's rare-class annotations; FIFO-evict at capacity.

    Samples without a rare-class annotation leave the pool unchanged.
    """
    image, annotations = sample
    rare_anns = tuple(a for a in annotations if a.class_id == rare)
    if not rare_anns:
        return pool
    entries = pool.entries + (PoolEntry(image, rare_anns),)
    if len(entries) > pool.capacity:
        entries = entries[len(entries) - pool.capacity :]
    return RarePool(capacity=pool.capacity, entries=entries)


def inject(pool: RarePool, rng: np.random.Generator) -> list[PoolEntry]:
    """Pick floor(n/2) distinct entries uniformly; the pool is untouched."""
    k = len(pool.entries) // 2
    if k == 0:
        return []
    idx = sorted(rng.choice(len(pool.entries), size=k, replace=False).tolist())
    return [pool.entries[i] for i in idx]


def pool_dump(pool: RarePool) -> Dataset:
    """Debug snapshot of the pool as an annotation document.

    Each entry becomes one image record (the entry's image reference as
    file name when it is a string) holding its rare-class annotations.
    """
    images = []
    annotations = []
    next_ann = 1
    for k, entry in enumerate(pool.entries, start=1):
        h, w = entry.annotations[0].segmentation["size"]
        name = entry.image if isinstance(entry.image, str) else f"entry_{k:03d}"
        images.append(ImageRecord(id=k, width=w, height=h, file_name=str(name)))
        for ann in entry.annotations:
            annotations.append(dataclasses.replace(ann, id=next_ann, image_id=k))
            next_ann += 1
    return Dataset(
        images=images, annotations=annotations, categories=sorted(CLASS_NAMES.items())
    )
