"""Two-stage training dataflow over a pluggable predictor.

Stage 1 streams supervised source batches. Each stage-2 iteration runs
a strict order: teacher inference on the target batch, confidence
filtering, source-to-target color alignment, rare-pool bookkeeping
(source-to-target direction only), bidirectional mixing, the external
trainer's student update, and the teacher moving-average update last.
Gradient optimization itself lives in an external trainer that consumes
the emitted mixed batches and returns updated student parameters; an
in-process callable stands in for it here.

Every random draw comes from generators derived from the configured
seed, so a (config, seed) pair fixes every emitted byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Protocol, Sequence

import numpy as np

from . import colorspace, ema_averager, rare_class_balancer
from .dataset_io import (
    CLASS_NAMES,
    CategoryGroup,
    Dataset,
    DEFAULT_GROUPING,
    GROUPS_BY_NAME,
    ImageRecord,
    InstanceAnnotation,
    apply_group_filter,
    class_statistics,
    load_dataset,
    make_annotation,
    read_image,
    save_dataset,
    write_image,
    write_mask_png,
)
from .ema_averager import EmaConfig, ParameterSet
from .loss_math import LossWeights, seg_loss
from .mixing_engine import MixOptions, MixedSample, mix
from .pseudo_labeler import (
    FilterConfig,
    Prediction,
    confidence,
    filter_predictions,
    fuse,
)
from .rare_class_balancer import RarePool


class Predictor(Protocol):
    def predict(self, image: np.ndarray, image_id: int = 0) -> list[Prediction]: ...

    def parameters(self) -> ParameterSet: ...


@dataclass(frozen=True)
class PipelineConfig:
    t_stage1: int = 40000
    t_stage2: int = 40000
    batch_size: int = 3
    filter: FilterConfig = FilterConfig()
    ema: EmaConfig = EmaConfig()
    mix: MixOptions = MixOptions()
    loss: LossWeights = LossWeights()
    grouping: tuple[CategoryGroup, ...] = DEFAULT_GROUPING
    seed: int = 0

    def __post_init__(self):
        if self.t_stage1 < 0 or self.t_stage2 < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        kwargs = dict(d)
        if "filter" in kwargs:
            kwargs["filter"] = FilterConfig(**kwargs["filter"])
        if "ema" in kwargs:
            kwargs["ema"] = EmaConfig(**kwargs["ema"])
        if "mix" in kwargs:
            mix_kwargs = dict(kwargs["mix"])
            if isinstance(mix_kwargs.get("group_filter"), str):
                mix_kwargs["group_filter"] = GROUPS_BY_NAME[mix_kwargs["group_filter"]]
            kwargs["mix"] = MixOptions(**mix_kwargs)
        if "loss" in kwargs:
            kwargs["loss"] = LossWeights(**kwargs["loss"])
        if "grouping" in kwargs:
            kwargs["grouping"] = tuple(
                GROUPS_BY_NAME[name] if isinstance(name, str) else name
                for name in kwargs["grouping"]
            )
        return cls(**kwargs)


class FilePredictor:
    """Serves externally produced predictions from an annotation document.

    Prediction documents must carry mask_conf and class_conf on every
    annotation; masks are decoded on demand per image id.
    """

    def __init__(self, dataset: Dataset, group: Optional[CategoryGroup] = None):
        self.group = group
        self._by_image: dict[int, list[InstanceAnnotation]] = {}
        for ann in dataset.annotations:
            if ann.mask_conf is None or ann.class_conf is None:
                raise ValueError(
                    f"prediction {ann.id} lacks mask_conf/class_conf fields"
                )
            self._by_image.setdefault(ann.image_id, []).append(ann)

    @classmethod
    def from_document(cls, path, group: Optional[CategoryGroup] = None):
        return cls(load_dataset(path), group=group)

    def predict(self, image: np.ndarray, image_id: int = 0) -> list[Prediction]:
        preds = []
        for ann in self._by_image.get(image_id, []):
            preds.append(
                Prediction(
                    class_id=ann.class_id,
                    mask=ann.decode_mask(),
                    mask_conf=ann.mask_conf,
                    class_conf=ann.class_conf,
                    source_group=self.group.name if self.group else "",
                )
            )
        return preds

    def parameters(self) -> ParameterSet:
        return {}


class EventLog:
    """Append-only, line-delimited record of pipeline events."""

    def __init__(self):
        self.records: list[dict] = []

    def emit(self, iteration: int, event: str, payload, direction: str = "", group: str = ""):
        digest = hashlib.sha256(repr(payload).encode("utf-8")).hexdigest()[:16]
        record = {"iter": iteration, "event": event, "digest": digest}
        if direction:
            record["direction"] = direction
        if group:
            record["group"] = group
        self.records.append(record)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for record in self.records:
                f.write(json.dumps(record) + "\n")


@dataclass
class Stage1Batch:
    iteration: int
    image_ids: list[int]
    loss: Optional[float] = None


DensePairProvider = Callable[[int], Sequence[tuple]]


def stage1_emit(
    source: Dataset,
    cfg: PipelineConfig,
    dense_provider: Optional[DensePairProvider] = None,
) -> Iterator[Stage1Batch]:
    """Stream t_stage1 uniformly drawn supervised batches of image ids.

    With a dense provider (image id -> (pred probs, class probs, gt
    mask, gt class) pairs) each batch also carries its supervised
    segmentation loss.
    """
    if not source.images:
        raise ValueError("source dataset has no images")
    ids = sorted(im.id for im in source.images)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    for iteration in range(cfg.t_stage1):
        chosen = [ids[int(i)] for i in rng.integers(0, len(ids), size=cfg.batch_size)]
        loss = None
        if dense_provider is not None:
            pairs = [pair for image_id in chosen for pair in dense_provider(image_id)]
            if pairs:
                loss = seg_loss(pairs, cfg.loss)
        yield Stage1Batch(iteration=iteration, image_ids=chosen, loss=loss)


@dataclass
class SourceSample:
    image: np.ndarray
    annotations: list[InstanceAnnotation]
    image_id: int


@dataclass
class TargetSample:
    image: np.ndarray
    image_id: int


@dataclass
class Stage2Result:
    mixed_s2t: list[MixedSample]
    mixed_t2s: list[MixedSample]
    pool: RarePool
    teacher_params: ParameterSet
    student_params: ParameterSet


def predictions_to_annotations(
    preds: Sequence[Prediction], image_id: int, start_id: int = 1
) -> list[InstanceAnnotation]:
    """Materialize predictions as scored annotations for mixing/export."""
    anns = []
    for offset, p in enumerate(preds):
        anns.append(
            make_annotation(
                start_id + offset,
                image_id,
                p.class_id,
                p.mask,
                score=confidence(p),
                mask_conf=p.mask_conf,
                class_conf=p.class_conf,
            )
        )
    return anns


def _transfer_to_stats(
    image: np.ndarray, stats: colorspace.ChannelStats
) -> np.ndarray:
    return colorspace.lab_to_rgb(
        colorspace.color_transfer(colorspace.rgb_to_lab(image), stats)
    )


Trainer = Callable[[ParameterSet, list[MixedSample], list[MixedSample]], ParameterSet]


def stage2_step(
    teacher: Predictor,
    student_params: ParameterSet,
    source_batch: Sequence[SourceSample],
    target_batch: Sequence[TargetSample],
    pool: RarePool,
    cfg: PipelineConfig,
    rng: np.random.Generator,
    iteration: int = 0,
    rare_class: Optional[int] = None,
    trainer: Optional[Trainer] = None,
    log: Optional[EventLog] = None,
    group_name: str = "",
) -> Stage2Result:
    """One stage-2 iteration in strict order; see the module docstring."""
    if len(source_batch) != len(target_batch):
        raise ValueError("source and target batches must pair one-to-one")
    log = log if log is not None else EventLog()

    def emit(event, payload, direction=""):
        log.emit(iteration, event, payload, direction=direction, group=group_name)

    # (1) teacher inference, (2) confidence filtering.
    pseudo: list[list[Prediction]] = []
    for t in target_batch:
        preds = teacher.predict(t.image, t.image_id)
        emit(
            "teacher_predict",
            (t.image_id, [(p.class_id, int(p.mask.sum()), round(confidence(p), 9)) for p in preds]),
        )
        kept = filter_predictions(preds, cfg.filter)
        emit("filter", (t.image_id, len(kept), cfg.filter.tau))
        pseudo.append(kept)

    # (3) align source appearance to each paired target.
    target_stats = [
        colorspace.channel_stats(colorspace.rgb_to_lab(t.image)) for t in target_batch
    ]
    transferred = []
    for s, t, stats in zip(source_batch, target_batch, target_stats):
        transferred.append(_transfer_to_stats(s.image, stats))
        emit("color_transfer", (s.image_id, t.image_id, tuple(round(v, 6) for v in stats.mean)))

    mixed_s2t: list[MixedSample] = []
    mixed_t2s: list[MixedSample] = []
    for i, (s, t) in enumerate(zip(source_batch, target_batch)):
        pseudo_anns = predictions_to_annotations(pseudo[i], t.image_id)
        donor_anns = apply_group_filter(s.annotations, cfg.mix.group_filter)

        # (4) rare-pool bookkeeping, source-to-target only.
        extra_donors = []
        if rare_class is not None:
            if any(a.class_id == rare_class for a in donor_anns):
                pool = rare_class_balancer.pool_offer(
                    pool, (s.image, donor_anns), rare_class
                )
                emit("pool_offer", (s.image_id, len(pool)), direction="s2t")
            else:
                entries = rare_class_balancer.inject(pool, rng)
                if entries:
                    extra_donors = [
                        (_transfer_to_stats(e.image, target_stats[i]), list(e.annotations))
                        for e in entries
                    ]
                    emit(
                        "rare_inject",
                        (s.image_id, len(entries)),
                        direction="s2t",
                    )

        # (5) bidirectional mixing.
        sample_s2t = mix(
            (transferred[i], donor_anns),
            (t.image, pseudo_anns),
            "s2t",
            cfg.mix,
            rng,
            extra_donors=extra_donors,
        )
        emit(
            "mix_s2t",
            (t.image_id, len(sample_s2t.annotations),
             hashlib.sha256(sample_s2t.image.tobytes()).hexdigest()[:16]),
            direction="s2t",
        )
        mixed_s2t.append(sample_s2t)

        sample_t2s = mix(
            (t.image, pseudo_anns),
            (transferred[i], s.annotations),
            "t2s",
            cfg.mix,
            rng,
        )
        emit(
            "mix_t2s",
            (s.image_id, len(sample_t2s.annotations),
             hashlib.sha256(sample_t2s.image.tobytes()).hexdigest()[:16]),
            direction="t2s",
        )
        mixed_t2s.append(sample_t2s)

    # (6) external trainer consumes the batches and updates the student.
    if trainer is not None:
        student_params = trainer(student_params, mixed_s2t, mixed_t2s)
    emit("student_update", sorted(student_params))

    # (7) the teacher moving average updates last.
    teacher_params = ema_averager.ema_update(
        teacher.parameters(), student_params, cfg.ema
    )
    emit(
        "ema_update",
        [(k, hashlib.sha256(v.tobytes()).hexdigest()[:8]) for k, v in sorted(teacher_params.items())],
    )
    return Stage2Result(
        mixed_s2t=mixed_s2t,
        mixed_t2s=mixed_t2s,
        pool=pool,
        teacher_params=teacher_params,
        student_params=student_params,
    )


def export_pseudo_dataset(
    target_images: Sequence[tuple[ImageRecord, np.ndarray]],
    predictor_a: Predictor,
    predictor_b: Predictor,
    cfg: PipelineConfig,
    group_a: CategoryGroup,
    group_b: CategoryGroup,
) -> Dataset:
    """Predict with both group models, filter, fuse, and package a
    validated pseudo-label dataset (scores preserved)."""
    overlap = group_a.classes & group_b.classes
    if overlap:
        raise ValueError(f"group class sets overlap: {sorted(overlap)}")
    records = []
    annotations: list[InstanceAnnotation] = []
    next_id = 1
    for record, image in target_images:
        records.append(record)
        preds_a = filter_predictions(predictor_a.predict(image, record.id), cfg.filter)
        preds_b = filter_predictions(predictor_b.predict(image, record.id), cfg.filter)
        merged = fuse(preds_a, preds_b, cfg.filter, group_a, group_b)
        anns = predictions_to_annotations(merged, record.id, start_id=next_id)
        next_id += len(anns)
        annotations.extend(anns)
    return Dataset(
        images=records,
        annotations=annotations,
        categories=sorted(CLASS_NAMES.items()),
    )


def load_image_dir(path) -> tuple[Dataset, dict[int, np.ndarray]]:
    """Load an annotations.json + images/ directory pair."""
    root = Path(path)
    dataset = load_dataset(root / "annotations.json")
    images = {im.id: read_image(root / im.file_name) for im in dataset.images}
    return dataset, images


def _write_mixed_direction(
    out_root: Path,
    group_name: str,
    direction: str,
    samples: list[tuple[int, int, MixedSample]],
) -> None:
    """Persist (iteration, slot, sample) triples as PNGs plus a document."""
    directory = out_root / group_name / direction
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    annotations = []
    next_ann = 1
    for iteration, slot, sample in samples:
        image_id = len(records) + 1
        stem = f"iter{iteration:05d}_{slot}"
        write_image(directory / f"{stem}.png", sample.image)
        write_mask_png(directory / f"{stem}_prov.png", sample.provenance)
        height, width = sample.image.shape[:2]
        records.append(
            ImageRecord(
                id=image_id, width=width, height=height,
                file_name=f"{stem}.png",
            )
        )
        for ann in sample.annotations:
            annotations.append(
                dataclasses.replace(ann, id=next_ann, image_id=image_id)
            )
            next_ann += 1
    save_dataset(
        Dataset(
            images=records,
            annotations=annotations,
            categories=sorted(CLASS_NAMES.items()),
        ),
        directory / "annotations.json",
    )


def run_stage2_sim(
    config: PipelineConfig,
    source_dir,
    target_dir,
    iters: int,
    out_dir,
) -> EventLog:
    """Drive the stage-2 dataflow with the toy mock predictor.

    One stream runs per category group, each with its own rare pool and
    teacher; mixed samples, final teacher parameters, and the event log
    land under ``out_dir``. The source directory must carry the
    toy_config.json its generator wrote (the predictor calibration comes
    from it).
    """
    from . import toygen  # heavier import kept local to the sim path

    source_root = Path(source_dir)
    toy_cfg_path = source_root / "toy_config.json"
    if not toy_cfg_path.exists():
        raise FileNotFoundError(
            f"{toy_cfg_path} not found; generate the source domain with gen-toy"
        )
    toy_cfg = toygen.ToySceneConfig.from_dict(
        json.loads(toy_cfg_path.read_text(encoding="utf-8"))
    )
    source_ds, source_images = load_image_dir(source_dir)
    _, target_images = load_image_dir(target_dir)

    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    events = EventLog()

    anns_by_image: dict[int, list[InstanceAnnotation]] = {}
    for ann in source_ds.annotations:
        anns_by_image.setdefault(ann.image_id, []).append(ann)
    source_ids = sorted(source_images)
    target_ids = sorted(target_images)

    for group_index, group in enumerate(config.grouping):
        group_cfg = replace(config, mix=replace(config.mix, group_filter=group))
        stats = class_statistics(source_ds, [group])
        rare = (
            rare_class_balancer.identify_rare(stats)[group.name]
            if group.name in stats
            else None
        )
        student = toygen.MockPredictor(
            toygen.calibration_for(toy_cfg, toygen.SOURCE),
            group=group,
            seed=config.seed,
        )
        student_params = student.parameters()
        teacher_params = ema_averager.init_from(student_params)
        pool = RarePool()
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 2, group_index])
        )
        collected: dict[str, list[tuple[int, int, MixedSample]]] = {
            "s2t": [],
            "t2s": [],
        }
        for iteration in range(iters):
            src_pick = [
                source_ids[int(i)]
                for i in rng.integers(0, len(source_ids), size=config.batch_size)
            ]
            tgt_pick = [
                target_ids[int(i)]
                for i in rng.integers(0, len(target_ids), size=config.batch_size)
            ]
            source_batch = [
                SourceSample(source_images[i], anns_by_image.get(i, []), i)
                for i in src_pick
            ]
            target_batch = [TargetSample(target_images[i], i) for i in tgt_pick]
            teacher = toygen.MockPredictor.from_parameters(teacher_params, student)
            result = stage2_step(
                teacher,
                student_params,
                source_batch,
                target_batch,
                pool,
                group_cfg,
                rng,
                iteration=iteration,
                rare_class=rare,
                log=events,
                group_name=group.name,
            )
            pool = result.pool
            teacher_params = result.teacher_params
            student_params = result.student_params
            for slot, sample in enumerate(result.mixed_s2t):
                collected["s2t"].append((iteration, slot, sample))
            for slot, sample in enumerate(result.mixed_t2s):
                collected["t2s"].append((iteration, slot, sample))
        for direction, samples in collected.items():
            _write_mixed_direction(out_root, group.name, direction, samples)
        ema_averager.save_parameters(
            teacher_params, out_root / f"teacher_params_{group.name}.bin"
        )
    events.write(out_root / "events.jsonl")
    return events
