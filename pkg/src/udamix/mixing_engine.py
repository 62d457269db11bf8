"""Bidirectional cross-domain cut-and-paste compositing.

Donor instances are routed by visible area: strictly above the area
threshold they are pasted instance-wise (mask pixels only); at or below
it they are pasted patch-wise (the bbox expanded by a margin is copied
wholesale, carrying clipped neighbor labels along). Pastes happen
sequentially and later pastes take priority over earlier pasted content
and labels; recipient labels overlapped by any pasted region are erased
there and dropped once they fall below the remnant-area floor.

Everything is pasted at its original coordinates; when donor and
recipient resolutions differ the donor is resized whole-image first
(bilinear pixels, nearest-neighbor masks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import mask_core
from .dataset_io import (
    CategoryGroup,
    InstanceAnnotation,
    apply_group_filter,
    make_annotation,
)

INSTANCE_WISE = "instance-wise"
PATCH_WISE = "patch-wise"

SELECT_ALL = "all"
SELECT_RANDOM_HALF = "random-half"

DEFAULT_AREA_THRESHOLD = 1500
DEFAULT_PATCH_MARGIN = 0.20


@dataclass(frozen=True)
class MixOptions:
    # Equality at the threshold routes patch-wise ("larger than" is strict).
    area_threshold: int = DEFAULT_AREA_THRESHOLD
    patch_margin: float = DEFAULT_PATCH_MARGIN
    min_remnant_area: int = mask_core.DEFAULT_MIN_REMNANT_AREA
    selection: str = SELECT_ALL
    group_filter: Optional[CategoryGroup] = None
    seed: int = 0

    def __post_init__(self):
        if self.area_threshold < 0:
            raise ValueError("area_threshold must be >= 0")
        if not 0.0 <= self.patch_margin <= 1.0:
            raise ValueError("patch_margin must lie in [0, 1]")
        if self.selection not in (SELECT_ALL, SELECT_RANDOM_HALF):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass
class MixedSample:
    """A composite image with composed labels and per-pixel provenance.

    ``provenance`` is True where the pixel came from a donor paste.
    """

    image: np.ndarray
    annotations: list[InstanceAnnotation]
    provenance: np.ndarray
    direction: str


def route_strategy(area: int, options: MixOptions) -> str:
    """Pick instance-wise or patch-wise pasting from the instance area."""
    if area < 0:
        raise ValueError("area must be >= 0")
    return INSTANCE_WISE if area > options.area_threshold else PATCH_WISE


def paste_instance(
    donor_image: np.ndarray, donor_mask: np.ndarray, canvas: np.ndarray
) -> np.ndarray:
    """Copy donor pixels under the mask onto the canvas (same coordinates)."""
    donor_mask = np.asarray(donor_mask, dtype=bool)
    if donor_image.shape != canvas.shape or donor_mask.shape != canvas.shape[:2]:
        raise ValueError(
            f"shape mismatch: donor {donor_image.shape}, mask {donor_mask.shape}, "
            f"canvas {canvas.shape}"
        )
    out = canvas.copy()
    out[donor_mask] = donor_image[donor_mask]
    return out


def expand_bbox(
    bbox: mask_core.BBox, margin: float, width: int, height: int
) -> tuple[int, int, int, int]:
    """Expand a bbox by margin*extent per side, clipped to image bounds.

    Returns half-open pixel bounds (x0, y0, x1, y1).
    """
    x, y, w, h = bbox
    mx = int(math.floor(margin * w + 0.5))
    my = int(math.floor(margin * h + 0.5))
    x0 = max(0, x - mx)
    y0 = max(0, y - my)
    x1 = min(width, x + w + mx)
    y1 = min(height, y + h + my)
    return x0, y0, x1, y1


def paste_patch(
    donor_image: np.ndarray,
    instance: InstanceAnnotation,
    donor_annotations: Sequence[InstanceAnnotation],
    options: MixOptions,
    canvas: np.ndarray,
) -> tuple[np.ndarray, list[tuple[InstanceAnnotation, np.ndarray]]]:
    """Copy the instance's expanded bbox region wholesale onto the canvas.

    Returns the new canvas and the carried labels: the instance's full
    mask plus every other donor annotation clipped to the patch whose
    clipped area clears ``min_remnant_area``. Carried entries are
    (source annotation, mask) pairs.
    """
    if donor_image.shape != canvas.shape:
        raise ValueError(
            f"shape mismatch: donor {donor_image.shape} vs canvas {canvas.shape}"
        )
    height, width = canvas.shape[:2]
    x0, y0, x1, y1 = expand_bbox(instance.bbox, options.patch_margin, width, height)
    out = canvas.copy()
    out[y0:y1, x0:x1] = donor_image[y0:y1, x0:x1]

    region = np.zeros((height, width), dtype=bool)
    region[y0:y1, x0:x1] = True

    carried = [(instance, instance.decode_mask())]
    for other in donor_annotations:
        if other.id == instance.id:
            continue
        clipped = other.decode_mask() & region
        if int(np.count_nonzero(clipped)) >= options.min_remnant_area:
            carried.append((other, clipped))
    return out, carried


def patch_region(
    instance_bbox: mask_core.BBox, options: MixOptions, width: int, height: int
) -> np.ndarray:
    """Boolean mask of the patch rectangle a patch-wise paste covers."""
    x0, y0, x1, y1 = expand_bbox(instance_bbox, options.patch_margin, width, height)
    region = np.zeros((height, width), dtype=bool)
    region[y0:y1, x0:x1] = True
    return region


def resize_to(image: np.ndarray, width: int, height: int, nearest: bool) -> np.ndarray:
    resample = Image.Resampling.NEAREST if nearest else Image.Resampling.BILINEAR
    if image.ndim == 2:
        src = Image.fromarray(image.astype(np.uint8) * 255)
        return np.asarray(src.resize((width, height), resample)) > 127
    return np.asarray(Image.fromarray(image).resize((width, height), resample))


def _resize_donor(
    image: np.ndarray,
    annotations: Sequence[InstanceAnnotation],
    width: int,
    height: int,
) -> tuple[np.ndarray, list[InstanceAnnotation]]:
    resized = resize_to(image, width, height, nearest=False)
    out = []
    for ann in annotations:
        mask = resize_to(ann.decode_mask(), width, height, nearest=True)
        if not np.any(mask):
            continue
        out.append(
            make_annotation(
                ann.id, ann.image_id, ann.class_id, mask,
                score=ann.score, mask_conf=ann.mask_conf, class_conf=ann.class_conf,
            )
        )
    return resized, out


def _select(
    annotations: list[InstanceAnnotation], options: MixOptions, rng: np.random.Generator
) -> list[InstanceAnnotation]:
    if options.selection == SELECT_ALL:
        return annotations
    k = len(annotations) // 2
    if k == 0:
        return []
    idx = sorted(rng.choice(len(annotations), size=k, replace=False).tolist())
    return [annotations[i] for i in idx]


@dataclass
class _PastedLabel:
    source: InstanceAnnotation
    mask: np.ndarray


def _erase_if_overlapping(
    mask: np.ndarray, region: np.ndarray, min_remnant_area: int
) -> Optional[np.ndarray]:
    """Erase only labels the region actually touches; untouched masks
    pass through whole (the remnant floor never drops them)."""
    if not np.any(mask & region):
        return mask
    return mask_core.erase_overlap(mask, region, min_remnant_area)


def mix(
    donor: tuple[np.ndarray, Sequence[InstanceAnnotation]],
    recipient: tuple[np.ndarray, Sequence[InstanceAnnotation]],
    direction: str,
    options: MixOptions,
    rng: Optional[np.random.Generator] = None,
    extra_donors: Sequence[tuple[np.ndarray, Sequence[InstanceAnnotation]]] = (),
) -> MixedSample:
    """Composite donor instances onto the recipient image.

    ``extra_donors`` provides additional (image, annotations) sources
    pasted after the primary donor instances (rare-class injection);
    they inherit sequential paste priority and skip donor selection.
    """
    if direction not in ("s2t", "t2s"):
        raise ValueError(f"direction must be 's2t' or 't2s', got {direction!r}")
    recipient_image, recipient_anns = recipient
    recipient_image = np.asarray(recipient_image)
    height, width = recipient_image.shape[:2]
    if rng is None:
        rng = np.random.default_rng(options.seed)

    recipient_anns = apply_group_filter(recipient_anns, options.group_filter)

    # Paste jobs: (donor image, annotation, that image's full annotation
    # list) so patch-wise carry-over sees all of its own image's labels.
    jobs: list[tuple[np.ndarray, InstanceAnnotation, list[InstanceAnnotation]]] = []
    primary_image, primary_anns = donor
    primary_image = np.asarray(primary_image)
    primary_anns = apply_group_filter(primary_anns, options.group_filter)
    if primary_image.shape[:2] != (height, width):
        primary_image, primary_anns = _resize_donor(
            primary_image, primary_anns, width, height
        )
    if primary_image.shape != recipient_image.shape:
        raise ValueError(
            f"donor shape {primary_image.shape} incompatible with recipient "
            f"{recipient_image.shape}"
        )
    for ann in _select(primary_anns, options, rng):
        jobs.append((primary_image, ann, primary_anns))

    for extra_image, extra_anns in extra_donors:
        extra_image = np.asarray(extra_image)
        extra_anns = apply_group_filter(extra_anns, options.group_filter)
        if extra_image.shape[:2] != (height, width):
            extra_image, extra_anns = _resize_donor(extra_image, extra_anns, width, height)
        for ann in extra_anns:
            jobs.append((extra_image, ann, extra_anns))

    canvas = recipient_image.copy()
    provenance = np.zeros((height, width), dtype=bool)
    pasted: list[_PastedLabel] = []

    for donor_image, ann, donor_anns in jobs:
        if route_strategy(ann.area, options) == INSTANCE_WISE:
            mask = ann.decode_mask()
            canvas = paste_instance(donor_image, mask, canvas)
            region = mask
            new_labels = [_PastedLabel(ann, mask)]
        else:
            canvas, carried = paste_patch(donor_image, ann, donor_anns, options, canvas)
            region = patch_region(ann.bbox, options, width, height)
            new_labels = [_PastedLabel(src, m) for src, m in carried]
        # Later pastes override earlier pasted labels inside their region.
        survivors = []
        for label in pasted:
            remnant = _erase_if_overlapping(label.mask, region, options.min_remnant_area)
            if remnant is not None:
                survivors.append(_PastedLabel(label.source, remnant))
        pasted = survivors + new_labels
        provenance |= region

    recipient_image_id = recipient_anns[0].image_id if recipient_anns else 1
    surviving_recipients: list[tuple[InstanceAnnotation, np.ndarray]] = []
    for ann in sorted(recipient_anns, key=lambda a: a.id):
        recipient_image_id = ann.image_id
        remnant = _erase_if_overlapping(
            ann.decode_mask(), provenance, options.min_remnant_area
        )
        if remnant is not None:
            surviving_recipients.append((ann, remnant))

    annotations: list[InstanceAnnotation] = []
    next_id = 1
    for source, mask in surviving_recipients + [(p.source, p.mask) for p in pasted]:
        annotations.append(
            make_annotation(
                next_id, recipient_image_id, source.class_id, mask,
                score=source.score, mask_conf=source.mask_conf,
                class_conf=source.class_conf,
            )
        )
        next_id += 1

    return MixedSample(
        image=canvas, annotations=annotations, provenance=provenance,
        direction=direction,
    )
