"""COCO-protocol average precision over instance masks.

Per class and IoU threshold, detections are greedily matched to ground
truth in descending score order (score ties break by annotation id);
the 101-point interpolated precision-recall curve yields AP. mAP
averages per-class AP over thresholds 0.50:0.05:0.95; mAP50 uses the
0.50 column. Classes without ground-truth instances are skipped, not
scored zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import mask_core
from .dataset_io import Dataset, InstanceAnnotation

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_points: int = 101
    max_dets: int = 100

    def __post_init__(self):
        ts = self.iou_thresholds
        if not ts or any(not 0.0 < t <= 1.0 for t in ts):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("IoU thresholds must be strictly increasing")
        if self.recall_points < 2 or self.max_dets < 1:
            raise ValueError("recall_points must be >= 2 and max_dets >= 1")


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    per_class: dict[int, dict]  # {"ap", "ap50", "by_threshold", "n_gt"}
    map: float
    map50: float

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "per_class": {
                str(c): {
                    "ap": v["ap"],
                    "ap50": v["ap50"],
                    "n_gt": v["n_gt"],
                    "by_threshold": {f"{t:.2f}": a for t, a in v["by_threshold"].items()},
                }
                for c, v in self.per_class.items()
            },
            "map": self.map,
            "map50": self.map50,
        }


def match_greedy(
    preds: Sequence[tuple[int, float, np.ndarray]],
    gts: Sequence[tuple[int, np.ndarray]],
    iou_t: float,
) -> list[bool]:
    """TP/FP flags for (id, score, mask) predictions already sorted by
    descending score (ties by ascending id) against (id, mask) ground
    truth of the same image and class.

    Each prediction takes the unmatched ground truth of maximal IoU when
    that IoU reaches the threshold; IoU ties break to the lowest GT id.
    """
    order = sorted(range(len(gts)), key=lambda i: gts[i][0])
    matched = [False] * len(gts)
    flags = []
    for _, _, pred_mask in preds:
        best_iou = 0.0
        best = -1
        for k in order:
            if matched[k]:
                continue
            iou = mask_core.mask_iou(pred_mask, gts[k][1])
            if iou > best_iou:
                best_iou = iou
                best = k
        if best >= 0 and best_iou >= iou_t:
            matched[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(
    flags: Sequence[bool], n_gt: int, recall_points: int = 101
) -> Optional[float]:
    """Interpolated AP from ordered TP/FP flags.

    Precision is interpolated at ``recall_points`` evenly spaced recall
    levels using exact integer comparisons, so independent
    implementations agree bit-for-bit. Returns None when n_gt == 0 (the
    class is skipped entirely).
    """
    if n_gt < 0:
        raise ValueError("n_gt must be >= 0")
    if n_gt == 0:
        return None
    tp = 0
    # precision_at[k] pairs cumulative TP with precision after k+1 preds.
    curve: list[tuple[int, float]] = []
    for k, flag in enumerate(flags):
        if flag:
            tp += 1
        curve.append((tp, tp / (k + 1)))
    steps = recall_points - 1
    total = 0.0
    for i in range(recall_points):
        best = 0.0
        for tp_k, prec_k in curve:
            # recall >= i/steps  <=>  tp_k * steps >= i * n_gt (exact).
            if tp_k * steps >= i * n_gt and prec_k > best:
                best = prec_k
        total += best
    return total / recall_points


def _gather(
    dataset: Dataset, require_scores: bool
) -> dict[int, dict[int, list[InstanceAnnotation]]]:
    """index[class_id][image_id] -> annotations."""
    index: dict[int, dict[int, list[InstanceAnnotation]]] = {}
    for ann in dataset.annotations:
        if require_scores and ann.score is None:
            raise ValueError(f"prediction {ann.id} lacks a score")
        index.setdefault(ann.class_id, {}).setdefault(ann.image_id, []).append(ann)
    return index


def evaluate(
    pred_dataset: Dataset, gt_dataset: Dataset, cfg: EvalConfig = EvalConfig()
) -> EvalReport:
    """Score a prediction dataset against ground truth."""
    gt_images = {im.id for im in gt_dataset.images}
    pred_images = {im.id for im in pred_dataset.images}
    if pred_images != gt_images:
        raise ValueError(
            f"image id mismatch: predictions {sorted(pred_images - gt_images)} "
            f"extra, {sorted(gt_images - pred_images)} missing"
        )
    if sorted(pred_dataset.categories) != sorted(gt_dataset.categories):
        raise ValueError("category tables differ between datasets")

    preds_by = _gather(pred_dataset, require_scores=True)
    gts_by = _gather(gt_dataset, require_scores=False)

    per_class: dict[int, dict] = {}
    for class_id in sorted(gts_by):
        gt_by_image = gts_by[class_id]
        n_gt = sum(len(v) for v in gt_by_image.values())
        pred_by_image = preds_by.get(class_id, {})

        # Per-image cap, then matching per image; flags are assembled in
        # the global (score desc, id asc) order for the PR curve.
        entries: list[tuple[float, int, int, int]] = []  # (-score, id, image, local)
        matches: dict[tuple[int, int], bool] = {}
        for image_id, anns in pred_by_image.items():
            ordered = sorted(anns, key=lambda a: (-a.score, a.id))[: cfg.max_dets]
            triples = [(a.id, a.score, a.decode_mask()) for a in ordered]
            gt_pairs = [
                (g.id, g.decode_mask()) for g in gt_by_image.get(image_id, [])
            ]
            for local, a in enumerate(ordered):
                entries.append((-a.score, a.id, image_id, local))
            for t in cfg.iou_thresholds:
                flags = match_greedy(triples, gt_pairs, t)
                for local, flag in enumerate(flags):
                    matches[(image_id, local), t] = flag  # type: ignore[index]
        entries.sort()

        by_threshold: dict[float, float] = {}
        for t in cfg.iou_thresholds:
            flags = [matches[(image_id, local), t] for _, _, image_id, local in entries]
            ap = average_precision(flags, n_gt, cfg.recall_points)
            assert ap is not None  # n_gt > 0 for gathered classes
            by_threshold[t] = ap
        ap_mean = sum(by_threshold.values()) / len(by_threshold)
        per_class[class_id] = {
            "ap": ap_mean,
            "ap50": by_threshold.get(0.5, next(iter(by_threshold.values()))),
            "by_threshold": by_threshold,
            "n_gt": n_gt,
        }

    if per_class:
        map_all = sum(v["ap"] for v in per_class.values()) / len(per_class)
        map50 = sum(v["ap50"] for v in per_class.values()) / len(per_class)
    else:
        map_all = 0.0
        map50 = 0.0
    return EvalReport(
        thresholds=tuple(cfg.iou_thresholds),
        per_class=per_class,
        map=map_all,
        map50=map50,
    )
