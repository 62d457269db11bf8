"""Loss arithmetic on dense per-pixel probabilities and class
distributions, for given prediction <-> ground-truth pairings.

The per-instance segmentation loss is the weighted sum of a class
cross-entropy, a per-pixel binary cross-entropy, and a dice loss; batch
losses average over instances. The two-direction mixing loss weights
the per-direction losses and sums them. Matching predictions to ground
truth is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PROB_CLAMP = 1e-7
DICE_EPSILON = 1.0


@dataclass(frozen=True)
class LossWeights:
    lambda_ce: float = 2.0
    lambda_bce: float = 5.0
    lambda_dice: float = 5.0
    lambda_mix_s2t: float = 1.0
    lambda_mix_t2s: float = 1.0

    def __post_init__(self):
        for name in (
            "lambda_ce", "lambda_bce", "lambda_dice",
            "lambda_mix_s2t", "lambda_mix_t2s",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")
    if np.any(pred < 0) or np.any(pred > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return pred, gt


def bce(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean binary cross-entropy over pixels, clamped for log stability."""
    pred, gt = _check_pair(pred, gt)
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = gt.astype(np.float64)
    return float(np.mean(-(g * np.log(p) + (1.0 - g) * np.log(1.0 - p))))


def dice(pred: np.ndarray, gt: np.ndarray, epsilon: float = DICE_EPSILON) -> float:
    """Dice loss 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)."""
    pred, gt = _check_pair(pred, gt)
    g = gt.astype(np.float64)
    num = 2.0 * float(np.sum(pred * g)) + epsilon
    den = float(np.sum(pred)) + float(np.sum(g)) + epsilon
    return 1.0 - num / den


def ce(class_probs: Sequence[float], gt_class: int) -> float:
    """Negative log-probability of the ground-truth class.

    Position i of the vector holds class id i + 1.
    """
    probs = np.asarray(class_probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError("class_probs must be a non-empty vector")
    if abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ValueError(f"class probabilities sum to {probs.sum()}, expected 1")
    if not 1 <= gt_class <= probs.size:
        raise ValueError(f"gt_class {gt_class} outside 1..{probs.size}")
    return float(-np.log(max(float(probs[gt_class - 1]), PROB_CLAMP)))


def seg_loss(
    pairs: Sequence[tuple[np.ndarray, Sequence[float], np.ndarray, int]],
    weights: LossWeights = LossWeights(),
) -> float:
    """Mean over (pred mask, class probs, gt mask, gt class) pairs of
    lambda_ce*ce + lambda_bce*bce + lambda_dice*dice."""
    if not pairs:
        raise ValueError("seg_loss needs at least one pair")
    total = 0.0
    for pred, class_probs, gt_mask, gt_class in pairs:
        total += (
            weights.lambda_ce * ce(class_probs, gt_class)
            + weights.lambda_bce * bce(pred, gt_mask)
            + weights.lambda_dice * dice(pred, gt_mask)
        )
    return total / len(pairs)


def stage2_loss(
    loss_s2t: float, loss_t2s: float, weights: LossWeights = LossWeights()
) -> float:
    """Weighted bidirectional mixing loss."""
    if loss_s2t < 0 or loss_t2s < 0:
        raise ValueError("directional losses must be >= 0")
    return weights.lambda_mix_s2t * loss_s2t + weights.lambda_mix_t2s * loss_t2s
