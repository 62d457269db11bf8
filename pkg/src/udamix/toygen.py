"""Procedural toy domains for desk-scale pipeline verification.

Scenes are colored primitives (circles, rectangles, scanline triangles)
on a dark background, drawn back to front so later shapes occlude
earlier ones; annotations store exactly the visible pixels. The target
domain applies a per-channel affine shift in CIELAB, standing in for a
real domain gap. A palette-matching mock predictor plays the teacher:
it segments by color distance to a calibrated palette and derives mask
and class confidences that decay monotonically with that distance.

Vehicle-class primitives are sized to exceed the instance-wise area
threshold while human-cycle primitives stay below it, so both routing
branches get exercised.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.ndimage as ndi

from . import colorspace
from .dataset_io import (
    CLASS_NAMES,
    CategoryGroup,
    Dataset,
    ImageRecord,
    InstanceAnnotation,
    make_annotation,
)
from .pseudo_labeler import Prediction

SOURCE = "source"
TARGET = "target"

CIRCLE = "circle"
RECT = "rect"
TRIANGLE = "triangle"


@dataclass(frozen=True)
class ShapeArchetype:
    """How one class renders: primitive kind, size ranges, base color."""

    kind: str
    w_range: tuple[int, int]
    h_range: tuple[int, int]
    color: tuple[int, int, int]


# Colors sit at moderate CIELAB chroma so palette, shading texture, and
# the target-domain shift all stay inside the sRGB gamut (the shift must
# remain an invertible affine map, not a clipped one).
DEFAULT_ARCHETYPES: dict[int, ShapeArchetype] = {
    1: ShapeArchetype(CIRCLE, (17, 23), (17, 23), (168, 82, 99)),      # person
    2: ShapeArchetype(TRIANGLE, (18, 24), (0, 0), (207, 139, 101)),    # rider
    3: ShapeArchetype(RECT, (44, 54), (40, 50), (123, 116, 48)),       # car
    4: ShapeArchetype(RECT, (52, 60), (36, 44), (103, 164, 110)),      # truck
    5: ShapeArchetype(RECT, (56, 64), (32, 40), (42, 143, 137)),       # bus
    6: ShapeArchetype(RECT, (66, 78), (24, 30), (43, 156, 191)),       # train
    7: ShapeArchetype(RECT, (20, 28), (7, 10), (73, 109, 172)),        # motorcycle
    8: ShapeArchetype(TRIANGLE, (16, 22), (0, 0), (187, 131, 189)),    # bicycle
}


@dataclass(frozen=True)
class ToySceneConfig:
    width: int = 128
    height: int = 128
    min_instances: int = 2
    max_instances: int = 5
    occlusion_probability: float = 0.25
    texture_amplitude: float = 5.0
    texture_period: float = 9.0
    lab_offset: tuple[float, float, float] = (9.0, 8.0, -9.0)
    lab_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: tuple[int, int, int] = (28, 28, 32)
    # Rows of fixed anchor colors at the image bottom. The strip keeps
    # per-image color statistics stable across scenes, so statistics
    # matching recovers the palette reliably; anchors sit far enough
    # from every class color that the predictor never segments them.
    anchor_rows: int = 40
    archetypes: Mapping[int, ShapeArchetype] = field(
        default_factory=lambda: dict(DEFAULT_ARCHETYPES)
    )
    seed: int = 7

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise ValueError("toy scenes must be at least 32x32")
        if not 0 <= self.anchor_rows <= self.height - 64:
            raise ValueError("anchor strip must leave >= 64 scene rows")

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "min_instances": self.min_instances,
            "max_instances": self.max_instances,
            "occlusion_probability": self.occlusion_probability,
            "texture_amplitude": self.texture_amplitude,
            "texture_period": self.texture_period,
            "lab_offset": list(self.lab_offset),
            "lab_scale": list(self.lab_scale),
            "background": list(self.background),
            "anchor_rows": self.anchor_rows,
            "archetypes": {
                str(cid): {
                    "kind": a.kind,
                    "w_range": list(a.w_range),
                    "h_range": list(a.h_range),
                    "color": list(a.color),
                }
                for cid, a in sorted(self.archetypes.items())
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToySceneConfig":
        kwargs = dict(d)
        for key in ("lab_offset", "lab_scale", "background"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "archetypes" in kwargs:
            kwargs["archetypes"] = {
                int(cid): ShapeArchetype(
                    kind=a["kind"],
                    w_range=tuple(a["w_range"]),
                    h_range=tuple(a["h_range"]),
                    color=tuple(a["color"]),
                )
                for cid, a in kwargs["archetypes"].items()
            }
        return cls(**kwargs)


@dataclass(frozen=True)
class ShapeSpec:
    """One placed primitive: class, kind, bbox anchor and extent."""

    class_id: int
    kind: str
    x0: int
    y0: int
    w: int
    h: int


@dataclass(frozen=True)
class Scene:
    image_id: int
    shapes: tuple[ShapeSpec, ...]  # draw order: later shapes occlude


def shape_mask(shape: ShapeSpec, width: int, height: int) -> np.ndarray:
    """Exact pixel coverage of a primitive.

    Triangles use an integer scanline rule: row i (0-based of h rows)
    spans cx +- ((i + 1) * w) // (2 * h).
    """
    mask = np.zeros((height, width), dtype=bool)
    if shape.kind == RECT:
        mask[shape.y0 : shape.y0 + shape.h, shape.x0 : shape.x0 + shape.w] = True
    elif shape.kind == CIRCLE:
        r = shape.w // 2
        cx, cy = shape.x0 + r, shape.y0 + r
        yy, xx = np.ogrid[:height, :width]
        mask[(xx - cx) ** 2 + (yy - cy) ** 2 <= r * r] = True
    elif shape.kind == TRIANGLE:
        cx = shape.x0 + shape.w // 2
        for i in range(shape.h):
            halfw = ((i + 1) * shape.w) // (2 * shape.h)
            y = shape.y0 + i
            mask[y, max(0, cx - halfw) : min(width, cx + halfw + 1)] = True
    else:
        raise ValueError(f"unknown shape kind {shape.kind!r}")
    return mask


def _sample_dims(arch: ShapeArchetype, rng: np.random.Generator) -> tuple[int, int]:
    w = int(rng.integers(arch.w_range[0], arch.w_range[1] + 1))
    if arch.kind == CIRCLE:
        r = w // 2
        return 2 * r + 1, 2 * r + 1
    if arch.kind == TRIANGLE:
        return w, max(4, (9 * w) // 10)
    h = int(rng.integers(arch.h_range[0], arch.h_range[1] + 1))
    return w, h


def _boxes_clear(box: tuple[int, int, int, int], others, pad: int = 2) -> bool:
    x0, y0, w, h = box
    for ox0, oy0, ow, oh in others:
        if (
            x0 - pad < ox0 + ow
            and ox0 - pad < x0 + w
            and y0 - pad < oy0 + oh
            and oy0 - pad < y0 + h
        ):
            return False
    return True


def sample_scene(cfg: ToySceneConfig, rng: np.random.Generator, image_id: int) -> Scene:
    n = int(rng.integers(cfg.min_instances, cfg.max_instances + 1))
    class_ids = sorted(cfg.archetypes)
    scene_height = cfg.height - cfg.anchor_rows
    shapes: list[ShapeSpec] = []
    placed: list[tuple[int, int, int, int]] = []
    for _ in range(n):
        class_id = int(class_ids[rng.integers(0, len(class_ids))])
        arch = cfg.archetypes[class_id]
        w, h = _sample_dims(arch, rng)
        if w > cfg.width or h > scene_height:
            continue
        occlude = rng.random() < cfg.occlusion_probability
        attempts = 1 if occlude else 40
        for _ in range(attempts):
            x0 = int(rng.integers(0, cfg.width - w + 1))
            y0 = int(rng.integers(0, scene_height - h + 1))
            if occlude or _boxes_clear((x0, y0, w, h), placed):
                shapes.append(ShapeSpec(class_id, arch.kind, x0, y0, w, h))
                placed.append((x0, y0, w, h))
                break
    return Scene(image_id=image_id, shapes=tuple(shapes))


_TEXTURE_PHASES = (0.0, 2.1, 4.2)


def anchor_colors(cfg: ToySceneConfig) -> np.ndarray:
    """Fixed strip colors: the class palette itself, as (N, 3) uint8.

    Carrying the palette extremes in every image pins per-image color
    statistics, so one large saturated instance cannot swing its image's
    moments far from the dataset reference. The predictor treats the
    strip rows like an ego-vehicle hood and never segments them.
    """
    return np.array(
        [cfg.archetypes[c].color for c in sorted(cfg.archetypes)], dtype=np.uint8
    )


def _texture(cfg: ToySceneConfig) -> np.ndarray:
    """Deterministic per-channel shading (H, W, 3); phases differ per
    channel so the variation carries chroma, not just lightness."""
    yy, xx = np.mgrid[: cfg.height, : cfg.width]
    base = 2.0 * np.pi * (xx + yy) / cfg.texture_period
    return np.stack(
        [cfg.texture_amplitude * np.sin(base + phase) for phase in _TEXTURE_PHASES],
        axis=-1,
    )


def apply_domain_shift(image: np.ndarray, cfg: ToySceneConfig) -> np.ndarray:
    """Shift an RGB image's CIELAB channels by the configured gap."""
    lab = colorspace.rgb_to_lab(image)
    offset = np.asarray(cfg.lab_offset)
    scale = np.asarray(cfg.lab_scale)
    shifted = lab * scale + offset
    shifted[..., 0] = np.clip(shifted[..., 0], *colorspace.L_RANGE)
    shifted[..., 1:] = np.clip(shifted[..., 1:], *colorspace.AB_RANGE)
    return colorspace.lab_to_rgb(shifted)


def render_scene(
    scene: Scene, cfg: ToySceneConfig, domain: str
) -> tuple[np.ndarray, list[tuple[int, np.ndarray]]]:
    """Rasterize a scene; returns the image and visible (class, mask) pairs."""
    if domain not in (SOURCE, TARGET):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    index_map = np.zeros((cfg.height, cfg.width), dtype=np.int32)
    for i, shape in enumerate(scene.shapes, start=1):
        index_map[shape_mask(shape, cfg.width, cfg.height)] = i

    image = np.empty((cfg.height, cfg.width, 3), dtype=np.float64)
    image[:] = cfg.background
    if cfg.anchor_rows > 0:
        anchors = anchor_colors(cfg)
        cell = cfg.width // len(anchors)
        strip_top = cfg.height - cfg.anchor_rows
        for j, color in enumerate(anchors):
            x0 = j * cell
            x1 = cfg.width if j == len(anchors) - 1 else (j + 1) * cell
            image[strip_top:, x0:x1] = color
    for i, shape in enumerate(scene.shapes, start=1):
        image[index_map == i] = cfg.archetypes[shape.class_id].color
    image = np.clip(image + _texture(cfg), 0, 255)
    image = np.rint(image).astype(np.uint8)
    if domain == TARGET:
        image = apply_domain_shift(image, cfg)

    visible = []
    for i, shape in enumerate(scene.shapes, start=1):
        mask = index_map == i
        if np.any(mask):
            visible.append((shape.class_id, mask))
    return image, visible


@dataclass
class ToyDomain:
    dataset: Dataset
    images: dict[int, np.ndarray]
    scenes: list[Scene]


def _domain_rng(cfg: ToySceneConfig, domain: str, image_index: int) -> np.random.Generator:
    code = 0 if domain == SOURCE else 1
    return np.random.default_rng(
        np.random.SeedSequence([cfg.seed, code, image_index])
    )


def generate_dataset(cfg: ToySceneConfig, n_images: int, domain: str) -> ToyDomain:
    """Generate a toy domain: images, exact annotations, scene graphs."""
    if n_images < 0:
        raise ValueError("n_images must be >= 0")
    images: dict[int, np.ndarray] = {}
    records: list[ImageRecord] = []
    annotations: list[InstanceAnnotation] = []
    scenes: list[Scene] = []
    ann_id = 1
    for idx in range(n_images):
        image_id = idx + 1
        rng = _domain_rng(cfg, domain, idx)
        scene = sample_scene(cfg, rng, image_id)
        image, visible = render_scene(scene, cfg, domain)
        images[image_id] = image
        scenes.append(scene)
        records.append(
            ImageRecord(
                id=image_id,
                width=cfg.width,
                height=cfg.height,
                file_name=f"images/img_{image_id:06d}.png",
            )
        )
        for class_id, mask in visible:
            annotations.append(make_annotation(ann_id, image_id, class_id, mask))
            ann_id += 1
    dataset = Dataset(
        images=records,
        annotations=annotations,
        categories=sorted(CLASS_NAMES.items()),
    )
    return ToyDomain(dataset=dataset, images=images, scenes=scenes)


@dataclass(frozen=True)
class PredictorCalibration:
    """Palette (CIELAB) and decision knobs for the mock predictor."""

    palette_lab: tuple[tuple[float, float, float], ...]
    match_radius: float = 14.0
    mask_conf_scale: float = 280.0
    class_conf_scale: float = 280.0
    min_component_area: int = 12
    # Bottom rows excluded from segmentation (the fixed anchor strip,
    # analogous to masking the ego hood in driving imagery).
    ignore_bottom_rows: int = 0


def calibration_for(cfg: ToySceneConfig, domain: str, **knobs) -> PredictorCalibration:
    """Build a palette calibration for one domain's rendering."""
    colors = np.array(
        [cfg.archetypes[c].color for c in sorted(cfg.archetypes)], dtype=np.uint8
    )
    lab = colorspace.rgb_to_lab(colors.reshape(1, -1, 3))[0]
    if domain == TARGET:
        lab = lab * np.asarray(cfg.lab_scale) + np.asarray(cfg.lab_offset)
    elif domain != SOURCE:
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    knobs.setdefault("ignore_bottom_rows", cfg.anchor_rows)
    return PredictorCalibration(
        palette_lab=tuple(tuple(float(v) for v in row) for row in lab), **knobs
    )


def mock_predict(
    image: np.ndarray,
    calibration: PredictorCalibration,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    group: Optional[CategoryGroup] = None,
) -> list[Prediction]:
    """Color-threshold segmentation against the calibrated palette.

    Pixels within ``match_radius`` of their nearest palette color are
    grouped into 4-connected components per class; component confidences
    decay exponentially with the mean color distance. Noise multiplies
    confidences by (1 - noise * u), u uniform per component.
    """
    if noise > 0 and rng is None:
        raise ValueError("noise > 0 requires an rng")
    lab = colorspace.rgb_to_lab(image)
    palette = np.asarray(calibration.palette_lab)
    dists = np.linalg.norm(lab[:, :, None, :] - palette[None, None, :, :], axis=-1)
    nearest = np.argmin(dists, axis=2)
    dmin = np.min(dists, axis=2)
    assigned = dmin <= calibration.match_radius
    if calibration.ignore_bottom_rows > 0:
        assigned[lab.shape[0] - calibration.ignore_bottom_rows :, :] = False

    class_ids = sorted(CLASS_NAMES) if group is None else sorted(group.classes)
    group_name = group.name if group is not None else ""
    preds: list[Prediction] = []
    for class_id in class_ids:
        sel = assigned & (nearest == class_id - 1)
        labels, n = ndi.label(sel)
        for comp in range(1, n + 1):
            mask = labels == comp
            if int(np.count_nonzero(mask)) < calibration.min_component_area:
                continue
            d = float(dmin[mask].mean())
            mask_conf = float(np.exp(-d / calibration.mask_conf_scale))
            class_conf = float(np.exp(-d / calibration.class_conf_scale))
            if noise > 0:
                mask_conf *= 1.0 - noise * float(rng.random())
                class_conf *= 1.0 - noise * float(rng.random())
            preds.append(
                Prediction(
                    class_id=class_id,
                    mask=mask,
                    mask_conf=mask_conf,
                    class_conf=class_conf,
                    source_group=group_name,
                )
            )
    return preds


class MockPredictor:
    """Teacher stand-in: palette segmentation behind the predictor protocol.

    Parameters expose the palette and radius as named float arrays so
    the moving-average machinery has something real to average; a
    predictor can be rebuilt from averaged parameters.
    """

    def __init__(
        self,
        calibration: PredictorCalibration,
        noise: float = 0.0,
        seed: int = 0,
        group: Optional[CategoryGroup] = None,
    ):
        self.calibration = calibration
        self.noise = noise
        self.seed = seed
        self.group = group

    def predict(self, image: np.ndarray, image_id: int = 0) -> list[Prediction]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, image_id]))
        return mock_predict(image, self.calibration, self.noise, rng, self.group)

    def parameters(self) -> dict[str, np.ndarray]:
        palette = np.asarray(self.calibration.palette_lab, dtype=np.float64)
        return {
            "palette_lab": palette.reshape(-1),
            "match_radius": np.array([self.calibration.match_radius]),
        }

    @classmethod
    def from_parameters(
        cls,
        params: Mapping[str, np.ndarray],
        template: "MockPredictor",
    ) -> "MockPredictor":
        palette = np.asarray(params["palette_lab"], dtype=np.float64).reshape(-1, 3)
        calibration = replace(
            template.calibration,
            palette_lab=tuple(tuple(float(v) for v in row) for row in palette),
            match_radius=float(np.asarray(params["match_radius"]).reshape(-1)[0]),
        )
        return cls(
            calibration, noise=template.noise, seed=template.seed, group=template.group
        )
