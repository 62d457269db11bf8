"""Dataset interchange: COCO-style annotation documents, instance-ID
images, validation, and per-group class statistics.

The annotation document is UTF-8 JSON with images / annotations /
categories records; segmentation is stored as uncompressed column-major
RLE counts. Instance-ID images are 16-bit single-channel PNGs encoding
``class_id * 1000 + k`` with k the 1-based index of the instance within
its class on that image (Cityscapes-like). The class vocabulary is fixed
to the 8 Cityscapes instance classes; datasets lacking some classes
simply omit them.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import mask_core

CLASS_NAMES: dict[int, str] = {
    1: "person",
    2: "rider",
    3: "car",
    4: "truck",
    5: "bus",
    6: "train",
    7: "motorcycle",
    8: "bicycle",
}

MAX_INSTANCES_PER_CLASS = 999


class DatasetError(ValueError):
    """Base class for dataset document problems."""


class DatasetParseError(DatasetError):
    """Malformed document; carries a best-effort location string."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(f"{message} (at {location})" if location else message)
        self.location = location


class DatasetReferenceError(DatasetError):
    """An annotation references a missing image or category."""


class DatasetValidationError(DatasetError):
    """A record violates a dataset invariant (area, bbox, size...)."""


class RasterizationError(DatasetError):
    """Annotations cannot be rendered to a single instance-ID image."""


@dataclass(frozen=True)
class CategoryGroup:
    """A named, disjoint subset of the class vocabulary."""

    name: str
    classes: frozenset[int]

    def __post_init__(self):
        if not self.classes:
            raise ValueError(f"category group {self.name!r} is empty")
        bad = sorted(set(self.classes) - set(CLASS_NAMES))
        if bad:
            raise ValueError(f"group {self.name!r} has unknown class ids {bad}")


HUMAN_CYCLE = CategoryGroup("human-cycle", frozenset({1, 2, 7, 8}))
VEHICLE = CategoryGroup("vehicle", frozenset({3, 4, 5, 6}))
ALL_CLASSES = CategoryGroup("all", frozenset(CLASS_NAMES))
DEFAULT_GROUPING: tuple[CategoryGroup, ...] = (HUMAN_CYCLE, VEHICLE)

GROUPS_BY_NAME = {g.name: g for g in (HUMAN_CYCLE, VEHICLE, ALL_CLASSES)}


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_name: str


@dataclass(frozen=True)
class InstanceAnnotation:
    """One labeled instance: class, RLE mask, bbox, area, optional scores.

    ``mask_conf`` / ``class_conf`` are prediction-document extension
    fields; ground-truth annotations leave them unset.
    """

    id: int
    image_id: int
    class_id: int
    segmentation: dict
    bbox: mask_core.BBox
    area: int
    score: Optional[float] = None
    mask_conf: Optional[float] = None
    class_conf: Optional[float] = None

    def decode_mask(self) -> np.ndarray:
        return mask_core.rle_decode(self.segmentation)


@dataclass
class Dataset:
    images: list[ImageRecord] = field(default_factory=list)
    annotations: list[InstanceAnnotation] = field(default_factory=list)
    categories: list[tuple[int, str]] = field(
        default_factory=lambda: sorted(CLASS_NAMES.items())
    )


def make_annotation(
    ann_id: int,
    image_id: int,
    class_id: int,
    mask: np.ndarray,
    score: Optional[float] = None,
    mask_conf: Optional[float] = None,
    class_conf: Optional[float] = None,
) -> InstanceAnnotation:
    """Build a consistent annotation from a decoded mask (area/bbox derived)."""
    area, bbox = mask_core.mask_stats(mask)
    if bbox is None:
        raise ValueError("cannot annotate an empty mask")
    return InstanceAnnotation(
        id=ann_id,
        image_id=image_id,
        class_id=class_id,
        segmentation=mask_core.rle_encode(mask),
        bbox=bbox,
        area=area,
        score=score,
        mask_conf=mask_conf,
        class_conf=class_conf,
    )


def _as_int(obj, key: str, location: str) -> int:
    try:
        v = obj[key]
    except (KeyError, TypeError):
        raise DatasetParseError(f"missing field {key!r}", location)
    if not isinstance(v, int) or isinstance(v, bool):
        raise DatasetParseError(f"field {key!r} must be an integer", location)
    return v


def _parse_image(rec: dict, idx: int) -> ImageRecord:
    loc = f"images[{idx}]"
    if not isinstance(rec, dict):
        raise DatasetParseError("image record must be an object", loc)
    name = rec.get("file_name")
    if not isinstance(name, str):
        raise DatasetParseError("field 'file_name' must be a string", loc)
    return ImageRecord(
        id=_as_int(rec, "id", loc),
        width=_as_int(rec, "width", loc),
        height=_as_int(rec, "height", loc),
        file_name=name,
    )


def _parse_annotation(rec: dict, idx: int) -> InstanceAnnotation:
    loc = f"annotations[{idx}]"
    if not isinstance(rec, dict):
        raise DatasetParseError("annotation record must be an object", loc)
    seg = rec.get("segmentation")
    if (
        not isinstance(seg, dict)
        or "size" not in seg
        or "counts" not in seg
        or not isinstance(seg["counts"], list)
        or len(seg["size"]) != 2
    ):
        raise DatasetParseError(
            "field 'segmentation' must be {size: [h, w], counts: [...]}", loc
        )
    bbox = rec.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise DatasetParseError("field 'bbox' must be [x, y, w, h]", loc)
    optional = {}
    for key in ("score", "mask_conf", "class_conf"):
        if key in rec and rec[key] is not None:
            v = rec[key]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise DatasetParseError(f"field {key!r} must be a number", loc)
            optional[key] = float(v)
    return InstanceAnnotation(
        id=_as_int(rec, "id", loc),
        image_id=_as_int(rec, "image_id", loc),
        class_id=_as_int(rec, "category_id", loc),
        segmentation={
            "size": [int(seg["size"][0]), int(seg["size"][1])],
            "counts": [int(c) for c in seg["counts"]],
        },
        bbox=tuple(int(v) for v in bbox),
        area=_as_int(rec, "area", loc),
        **optional,
    )


def dataset_from_document(doc: dict) -> Dataset:
    """Build a Dataset from a parsed document, without validating it."""
    if not isinstance(doc, dict):
        raise DatasetParseError("document root must be an object", "$")
    for key in ("images", "annotations", "categories"):
        if key not in doc or not isinstance(doc[key], list):
            raise DatasetParseError(f"missing or non-list field {key!r}", "$")
    images = [_parse_image(rec, i) for i, rec in enumerate(doc["images"])]
    annotations = [_parse_annotation(rec, i) for i, rec in enumerate(doc["annotations"])]
    categories = []
    for i, rec in enumerate(doc["categories"]):
        loc = f"categories[{i}]"
        cid = _as_int(rec, "id", loc)
        name = rec.get("name")
        if not isinstance(name, str):
            raise DatasetParseError("field 'name' must be a string", loc)
        categories.append((cid, name))
    return Dataset(images=images, annotations=annotations, categories=categories)


def dataset_to_document(dataset: Dataset) -> dict:
    """Serialize a Dataset to its canonical document form (sorted by id)."""
    images = [
        {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
        for im in sorted(dataset.images, key=lambda im: im.id)
    ]
    annotations = []
    for ann in sorted(dataset.annotations, key=lambda a: a.id):
        rec = {
            "id": ann.id,
            "image_id": ann.image_id,
            "category_id": ann.class_id,
            "segmentation": {
                "size": list(ann.segmentation["size"]),
                "counts": list(ann.segmentation["counts"]),
            },
            "bbox": list(ann.bbox),
            "area": ann.area,
        }
        if ann.score is not None:
            rec["score"] = ann.score
        if ann.mask_conf is not None:
            rec["mask_conf"] = ann.mask_conf
        if ann.class_conf is not None:
            rec["class_conf"] = ann.class_conf
        annotations.append(rec)
    categories = [
        {"id": cid, "name": name} for cid, name in sorted(dataset.categories)
    ]
    return {"images": images, "annotations": annotations, "categories": categories}


def validate_dataset(dataset: Dataset) -> None:
    """Check referential integrity and per-annotation mask invariants."""
    image_by_id: dict[int, ImageRecord] = {}
    for im in dataset.images:
        if im.id <= 0:
            raise DatasetValidationError(f"image id {im.id} must be positive")
        if im.id in image_by_id:
            raise DatasetValidationError(f"duplicate image id {im.id}")
        if im.width < 1 or im.height < 1:
            raise DatasetValidationError(f"image {im.id} has invalid size")
        image_by_id[im.id] = im
    cat_ids = {cid for cid, _ in dataset.categories}
    seen_ann = set()
    for ann in dataset.annotations:
        if ann.id <= 0:
            raise DatasetValidationError(f"annotation id {ann.id} must be positive")
        if ann.id in seen_ann:
            raise DatasetValidationError(f"duplicate annotation id {ann.id}")
        seen_ann.add(ann.id)
        im = image_by_id.get(ann.image_id)
        if im is None:
            raise DatasetReferenceError(
                f"annotation {ann.id} references missing image {ann.image_id}"
            )
        if ann.class_id not in cat_ids:
            raise DatasetReferenceError(
                f"annotation {ann.id} references missing category {ann.class_id}"
            )
        h, w = ann.segmentation["size"]
        if (h, w) != (im.height, im.width):
            raise DatasetValidationError(
                f"annotation {ann.id} mask size {(h, w)} != image size "
                f"{(im.height, im.width)}"
            )
        mask = ann.decode_mask()
        area, bbox = mask_core.mask_stats(mask)
        if ann.area != area:
            raise DatasetValidationError(
                f"annotation {ann.id} area {ann.area} != mask area {area}"
            )
        if bbox is None or tuple(ann.bbox) != bbox:
            raise DatasetValidationError(
                f"annotation {ann.id} bbox {ann.bbox} != tight bbox {bbox}"
            )
        for key in ("score", "mask_conf", "class_conf"):
            v = getattr(ann, key)
            if v is not None and not 0.0 <= v <= 1.0:
                raise DatasetValidationError(
                    f"annotation {ann.id} {key} {v} outside [0, 1]"
                )


def load_dataset(path) -> Dataset:
    """Load and validate an annotation document."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetParseError(e.msg, f"line {e.lineno}, column {e.colno}") from e
    dataset = dataset_from_document(doc)
    validate_dataset(dataset)
    return dataset


def save_dataset(dataset: Dataset, path) -> None:
    """Write the canonical document; round-trips are byte-stable."""
    doc = dataset_to_document(dataset)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_instance_id_image(
    annotations: Sequence[InstanceAnnotation], width: int, height: int
) -> np.ndarray:
    """Rasterize one image's annotations to a 16-bit instance-ID array.

    Pixel value is class_id * 1000 + k (k = 1-based index of the
    instance within its class, in annotation-id order); background is 0.
    Masks must be pairwise disjoint.
    """
    out = np.zeros((height, width), dtype=np.uint16)
    counters: Counter[int] = Counter()
    for ann in sorted(annotations, key=lambda a: a.id):
        counters[ann.class_id] += 1
        k = counters[ann.class_id]
        if k > MAX_INSTANCES_PER_CLASS:
            raise RasterizationError(
                f"more than {MAX_INSTANCES_PER_CLASS} instances of class "
                f"{ann.class_id} on one image"
            )
        mask = ann.decode_mask()
        if mask.shape != (height, width):
            raise RasterizationError(
                f"annotation {ann.id} mask shape {mask.shape} != {(height, width)}"
            )
        if np.any(out[mask] != 0):
            raise RasterizationError(
                f"annotation {ann.id} overlaps a previously rasterized instance"
            )
        out[mask] = ann.class_id * 1000 + k
    return out


def read_instance_id_image(array: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """Invert write_instance_id_image to (class_id, mask) pairs."""
    array = np.asarray(array)
    pairs = []
    for value in sorted(int(v) for v in np.unique(array) if v != 0):
        class_id, k = divmod(value, 1000)
        if class_id not in CLASS_NAMES or k < 1:
            raise DatasetValidationError(f"invalid instance-ID pixel value {value}")
        pairs.append((class_id, array == value))
    return pairs


def class_statistics(
    dataset: Dataset, grouping: Sequence[CategoryGroup] = DEFAULT_GROUPING
) -> dict[str, dict[int, float]]:
    """Per-group instance shares. Shares within a group sum to 1.

    Classes with zero instances are omitted (they cannot serve as
    donors), and groups with zero instances are absent from the result.
    """
    counts = Counter(ann.class_id for ann in dataset.annotations)
    result: dict[str, dict[int, float]] = {}
    for group in grouping:
        present = {c: counts[c] for c in sorted(group.classes) if counts[c] > 0}
        total = sum(present.values())
        if total == 0:
            continue
        result[group.name] = {c: n / total for c, n in present.items()}
    return result


def apply_group_filter(
    annotations: Sequence[InstanceAnnotation], group: Optional[CategoryGroup]
) -> list[InstanceAnnotation]:
    """Restrict annotations to a category group (None keeps everything)."""
    if group is None:
        return list(annotations)
    return [a for a in annotations if a.class_id in group.classes]


def read_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as (H, W, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected (H, W, 3) uint8 image")
    Image.fromarray(image).save(path, format="PNG")


def read_instance_id_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.uint16)


def write_instance_id_png(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint16 or array.ndim != 2:
        raise ValueError("expected (H, W) uint16 array")
    Image.fromarray(array).save(path, format="PNG")


def write_mask_png(path, mask: np.ndarray) -> None:
    """Write a boolean mask as an 8-bit 0/255 PNG (provenance maps)."""
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255).save(
        path, format="PNG"
    )


__all__ = [
    "CLASS_NAMES",
    "CategoryGroup",
    "Dataset",
    "DatasetError",
    "DatasetParseError",
    "DatasetReferenceError",
    "DatasetValidationError",
    "RasterizationError",
    "HUMAN_CYCLE",
    "VEHICLE",
    "ALL_CLASSES",
    "DEFAULT_GROUPING",
    "GROUPS_BY_NAME",
    "ImageRecord",
    "InstanceAnnotation",
    "apply_group_filter",
    "class_statistics",
    "dataset_from_document",
    "dataset_to_document",
    "load_dataset",
    "make_annotation",
    "read_image",
    "read_instance_id_image",
    "read_instance_id_png",
    "save_dataset",
    "validate_dataset",
    "write_image",
    "write_instance_id_image",
    "write_instance_id_png",
    "write_mask_png",
]
