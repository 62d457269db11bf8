"""Confidence scoring, thresholding, and cross-group fusion of teacher
predictions into pseudo-labels.

A prediction's confidence is the product of its mask confidence and its
class confidence. Filtering keeps predictions at or above the threshold
tau. Fusion merges the two category-group models' outputs: whenever a
cross-group pair overlaps above ``fuse_iou``, the lower-confidence
member is removed (ties keep the group-A member), so every surviving
instance is attributed to exactly one model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import mask_core
from .dataset_io import CategoryGroup


@dataclass
class Prediction:
    """One teacher prediction: class, binary mask, confidence pair."""

    class_id: int
    mask: np.ndarray
    mask_conf: float
    class_conf: float
    source_group: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not np.any(self.mask):
            raise ValueError("prediction mask must be non-empty")
        for name in ("mask_conf", "class_conf"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} {v} outside [0, 1]")


@dataclass(frozen=True)
class FilterConfig:
    tau: float = 0.9
    fuse_iou: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0 or not 0.0 <= self.fuse_iou <= 1.0:
            raise ValueError("tau and fuse_iou must lie in [0, 1]")


def confidence(pred: Prediction) -> float:
    """Pseudo-label confidence: mask confidence times class confidence."""
    return pred.mask_conf * pred.class_conf


def filter_predictions(
    preds: Sequence[Prediction], cfg: FilterConfig
) -> list[Prediction]:
    """Keep predictions with confidence >= tau, preserving order."""
    return [p for p in preds if confidence(p) >= cfg.tau]


def _validate_group(preds: Sequence[Prediction], group: Optional[CategoryGroup]):
    if group is None:
        return
    for p in preds:
        if p.class_id not in group.classes:
            raise ValueError(
                f"prediction class {p.class_id} outside group {group.name!r}"
            )


def fuse(
    preds_a: Sequence[Prediction],
    preds_b: Sequence[Prediction],
    cfg: FilterConfig,
    group_a: Optional[CategoryGroup] = None,
    group_b: Optional[CategoryGroup] = None,
) -> list[Prediction]:
    """Merge two group models' outputs with cross-group suppression.

    A prediction is removed when some prediction of the other group
    overlaps it with IoU > fuse_iou at higher confidence; on exact
    confidence ties the group-A member survives. Output order is all
    surviving A predictions followed by surviving B predictions.
    """
    _validate_group(preds_a, group_a)
    _validate_group(preds_b, group_b)
    name_a = group_a.name if group_a else "a"
    name_b = group_b.name if group_b else "b"

    drop_a = [False] * len(preds_a)
    drop_b = [False] * len(preds_b)
    for i, pa in enumerate(preds_a):
        for j, pb in enumerate(preds_b):
            if mask_core.mask_iou(pa.mask, pb.mask) <= cfg.fuse_iou:
                continue
            if confidence(pb) > confidence(pa):
                drop_a[i] = True
            else:
                drop_b[j] = True

    merged: list[Prediction] = []
    for keep_flags, preds, name in ((drop_a, preds_a, name_a), (drop_b, preds_b, name_b)):
        for dropped, p in zip(keep_flags, preds):
            if not dropped:
                merged.append(
                    Prediction(p.class_id, p.mask, p.mask_conf, p.class_conf, name)
                )
    return merged
