"""Small builders shared across test modules."""

from __future__ import annotations

import numpy as np

from udamix.dataset_io import (
    CLASS_NAMES,
    Dataset,
    ImageRecord,
    InstanceAnnotation,
    make_annotation,
)


def random_mask(rng, height, width, p=0.35, nonempty=False):
    mask = rng.random((height, width)) < p
    if nonempty and not mask.any():
        mask[rng.integers(0, height), rng.integers(0, width)] = True
    return mask


def mask_from_rows(rows):
    """Build a boolean mask from strings of '.'/'#' rows."""
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def build_dataset(size, annotations, file_prefix="img"):
    """Dataset with one image per distinct image_id in ``annotations``.

    ``annotations`` is a list of (ann_id, image_id, class_id, mask[, score]).
    """
    height, width = size
    anns = []
    image_ids = set()
    for entry in annotations:
        ann_id, image_id, class_id, mask = entry[:4]
        score = entry[4] if len(entry) > 4 else None
        image_ids.add(image_id)
        anns.append(make_annotation(ann_id, image_id, class_id, mask, score=score))
    images = [
        ImageRecord(id=i, width=width, height=height, file_name=f"{file_prefix}_{i}.png")
        for i in sorted(image_ids)
    ]
    return Dataset(
        images=images, annotations=anns, categories=sorted(CLASS_NAMES.items())
    )


def with_images(dataset: Dataset, image_ids) -> Dataset:
    """Ensure the dataset lists exactly these image ids (64x64 stubs)."""
    known = {im.id: im for im in dataset.images}
    images = [
        known.get(i, ImageRecord(id=i, width=64, height=64, file_name=f"img_{i}.png"))
        for i in sorted(set(image_ids) | set(known))
    ]
    return Dataset(
        images=images, annotations=dataset.annotations, categories=dataset.categories
    )
