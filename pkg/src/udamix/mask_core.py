"""Binary mask primitives: RLE codec, geometry, and overlap erasure.

Masks are boolean numpy arrays of shape (height, width), row-major
(x = column, y = row). The run-length encoding follows the uncompressed
COCO convention: runs are counted over column-major pixel order and the
first count is a background run (possibly 0).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

BBox = tuple[int, int, int, int]  # (x, y, w, h)

DEFAULT_MIN_REMNANT_AREA = 10


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValueError(f"mask dimensions must be >= 1, got {mask.shape}")
    return mask.astype(bool, copy=False)


def rle_encode(mask: np.ndarray) -> dict:
    """Encode a binary mask as column-major RLE counts.

    Returns {"size": [height, width], "counts": [...]} where counts
    alternate background/foreground runs starting with background.
    """
    mask = _check_mask(mask)
    h, w = mask.shape
    flat = mask.flatten(order="F")
    counts: list[int] = []
    if flat[0]:
        counts.append(0)
    boundaries = np.flatnonzero(np.diff(flat.view(np.uint8)))
    prev = 0
    for b in boundaries:
        counts.append(int(b) + 1 - prev)
        prev = int(b) + 1
    counts.append(flat.size - prev)
    return {"size": [h, w], "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    """Decode column-major RLE counts back to a boolean mask."""
    h, w = (int(v) for v in rle["size"])
    if h < 1 or w < 1:
        raise ValueError(f"RLE size must be >= 1x1, got {rle['size']}")
    counts = [int(c) for c in rle["counts"]]
    if any(c < 0 for c in counts):
        raise ValueError("RLE counts must be non-negative")
    if any(c == 0 for c in counts[1:]):
        raise ValueError("only the first RLE count may be zero")
    total = sum(counts)
    if total != h * w:
        raise ValueError(f"RLE counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos : pos + c] = True
        pos += c
        value = not value
    return flat.reshape((h, w), order="F")


def mask_area(mask: np.ndarray) -> int:
    return int(np.count_nonzero(_check_mask(mask)))


def mask_bbox(mask: np.ndarray) -> Optional[BBox]:
    """Tight bounding box (x, y, w, h), or None for an empty mask."""
    mask = _check_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def mask_stats(mask: np.ndarray) -> tuple[int, Optional[BBox]]:
    """Foreground pixel count plus tight bbox (None when empty)."""
    return mask_area(mask), mask_bbox(mask)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two same-sized masks.

    Raises if the masks differ in shape or are both empty (the ratio is
    undefined; callers must filter empties explicitly).
    """
    a = _check_mask(a)
    b = _check_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        raise ValueError("IoU of two empty masks is undefined")
    inter = int(np.count_nonzero(a & b))
    return inter / union


def erase_overlap(
    recipient: np.ndarray,
    pasted: np.ndarray,
    min_remnant_area: int = DEFAULT_MIN_REMNANT_AREA,
) -> Optional[np.ndarray]:
    """Remove the pasted region from a recipient mask.

    Returns ``recipient AND NOT pasted``, or None when the remnant falls
    below ``min_remnant_area`` pixels and the instance should be dropped.
    """
    recipient = _check_mask(recipient)
    pasted = _check_mask(pasted)
    if recipient.shape != pasted.shape:
        raise ValueError(f"mask shapes differ: {recipient.shape} vs {pasted.shape}")
    remnant = recipient & ~pasted
    if int(np.count_nonzero(remnant)) < min_remnant_area:
        return None
    return remnant
