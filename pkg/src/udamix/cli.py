"""Command-line interface.

Subcommands cover the toolbox end to end: toy-domain generation, color
transfer, cut-and-paste mixing, pseudo-label filtering and fusion,
teacher parameter averaging, loss reporting, AP evaluation, the stage-2
dataflow simulation, and pseudo-dataset export.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import colorspace, ema_averager, eval_ap, loss_math, toygen
from .dataset_io import (
    CLASS_NAMES,
    Dataset,
    GROUPS_BY_NAME,
    ImageRecord,
    load_dataset,
    read_image,
    save_dataset,
    write_image,
    write_instance_id_image,
    write_instance_id_png,
    write_mask_png,
)
from .mixing_engine import MixOptions, mix
from .pipeline import (
    FilePredictor,
    PipelineConfig,
    export_pseudo_dataset,
    load_image_dir,
    run_stage2_sim,
)
from .pseudo_labeler import FilterConfig

SEED_ENV_VAR = "UDA4INST_SEED"

CLASS_COLUMNS = ["Person", "Rider", "Car", "Truck", "Bus", "Train", "M.C", "B.C"]


def _cmd_gen_toy(args) -> int:
    if args.config:
        cfg = toygen.ToySceneConfig.from_dict(
            json.loads(Path(args.config).read_text(encoding="utf-8"))
        )
    else:
        cfg = toygen.ToySceneConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    domain = toygen.generate_dataset(cfg, args.n, args.domain)
    out = Path(args.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for record in domain.dataset.images:
        write_image(out / record.file_name, domain.images[record.id])
    save_dataset(domain.dataset, out / "annotations.json")
    (out / "toy_config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    if args.instance_ids:
        id_dir = out / "instance_ids"
        id_dir.mkdir(exist_ok=True)
        by_image: dict[int, list] = {}
        for ann in domain.dataset.annotations:
            by_image.setdefault(ann.image_id, []).append(ann)
        for record in domain.dataset.images:
            array = write_instance_id_image(
                by_image.get(record.id, []), record.width, record.height
            )
            write_instance_id_png(id_dir / f"img_{record.id:06d}.png", array)
    print(
        f"generated {len(domain.dataset.images)} {args.domain} images, "
        f"{len(domain.dataset.annotations)} annotations -> {out}"
    )
    return 0


def _cmd_colortransfer(args) -> int:
    source = read_image(args.source)
    if args.stats:
        stats = colorspace.ChannelStats.from_dict(
            json.loads(Path(args.stats).read_text(encoding="utf-8"))
        )
    elif args.target:
        stats = colorspace.channel_stats(
            colorspace.rgb_to_lab(read_image(args.target))
        )
    else:
        print("colortransfer: provide --target or --stats", file=sys.stderr)
        return 2
    lab = colorspace.color_transfer(colorspace.rgb_to_lab(source), stats)
    write_image(args.out, colorspace.lab_to_rgb(lab))
    print(f"wrote {args.out}")
    return 0


def _cmd_mix(args) -> int:
    group = GROUPS_BY_NAME[args.group] if args.group != "all" else None
    options = MixOptions(
        area_threshold=args.area_threshold,
        group_filter=group,
        seed=args.seed,
    )
    source_ds, source_images = load_image_dir(args.source_dir)
    _, target_images = load_image_dir(args.target_dir)
    pseudo_ds = load_dataset(args.pseudo)

    src_anns: dict[int, list] = {}
    for ann in source_ds.annotations:
        src_anns.setdefault(ann.image_id, []).append(ann)
    pseudo_anns: dict[int, list] = {}
    for ann in pseudo_ds.annotations:
        pseudo_anns.setdefault(ann.image_id, []).append(ann)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    records, annotations = [], []
    next_ann = 1
    source_ids = sorted(source_images)
    target_ids = sorted(target_images)
    for index, (sid, tid) in enumerate(zip(source_ids, target_ids), start=1):
        source = (source_images[sid], src_anns.get(sid, []))
        target = (target_images[tid], pseudo_anns.get(tid, []))
        donor, recipient = (
            (source, target) if args.direction == "s2t" else (target, source)
        )
        sample = mix(donor, recipient, args.direction, options, rng)
        stem = f"mixed_{index:06d}"
        write_image(out / f"{stem}.png", sample.image)
        write_mask_png(out / f"{stem}_prov.png", sample.provenance)
        height, width = sample.image.shape[:2]
        records.append(
            ImageRecord(id=index, width=width, height=height, file_name=f"{stem}.png")
        )
        for ann in sample.annotations:
            annotations.append(replace(ann, id=next_ann, image_id=index))
            next_ann += 1
    save_dataset(
        Dataset(
            images=records,
            annotations=annotations,
            categories=sorted(CLASS_NAMES.items()),
        ),
        out / "annotations.json",
    )
    print(f"mixed {len(records)} {args.direction} samples -> {out}")
    return 0


def _cmd_filter(args) -> int:
    dataset = load_dataset(args.pred)
    kept = []
    for ann in dataset.annotations:
        if ann.mask_conf is None or ann.class_conf is None:
            print(
                f"filter: prediction {ann.id} lacks mask_conf/class_conf",
                file=sys.stderr,
            )
            return 2
        if ann.mask_conf * ann.class_conf >= args.tau:
            kept.append(ann)
    save_dataset(
        Dataset(images=dataset.images, annotations=kept, categories=dataset.categories),
        args.out,
    )
    print(f"kept {len(kept)}/{len(dataset.annotations)} predictions at tau={args.tau}")
    return 0


def _cmd_fuse(args) -> int:
    from .pseudo_labeler import Prediction, fuse as fuse_op

    ds_a = load_dataset(args.group_a)
    ds_b = load_dataset(args.group_b)
    cfg = FilterConfig(tau=0.0, fuse_iou=args.iou)

    images = {im.id: im for im in ds_a.images}
    for im in ds_b.images:
        if im.id in images and images[im.id] != im:
            print(f"fuse: image {im.id} differs between documents", file=sys.stderr)
            return 2
        images[im.id] = im

    def to_preds(ds, tag):
        by_image: dict[int, list[Prediction]] = {}
        for ann in ds.annotations:
            if ann.mask_conf is None or ann.class_conf is None:
                raise ValueError(f"prediction {ann.id} lacks mask_conf/class_conf")
            by_image.setdefault(ann.image_id, []).append(
                Prediction(
                    ann.class_id, ann.decode_mask(), ann.mask_conf, ann.class_conf, tag
                )
            )
        return by_image

    preds_a = to_preds(ds_a, "a")
    preds_b = to_preds(ds_b, "b")
    classes_a = {a.class_id for anns in preds_a.values() for a in anns}
    classes_b = {b.class_id for anns in preds_b.values() for b in anns}
    if classes_a & classes_b:
        print(
            f"fuse: class sets overlap: {sorted(classes_a & classes_b)}",
            file=sys.stderr,
        )
        return 2

    from .pipeline import predictions_to_annotations

    annotations = []
    next_id = 1
    for image_id in sorted(images):
        merged = fuse_op(preds_a.get(image_id, []), preds_b.get(image_id, []), cfg)
        anns = predictions_to_annotations(merged, image_id, start_id=next_id)
        next_id += len(anns)
        annotations.extend(anns)
    save_dataset(
        Dataset(
            images=sorted(images.values(), key=lambda im: im.id),
            annotations=annotations,
            categories=sorted(CLASS_NAMES.items()),
        ),
        args.out,
    )
    print(f"fused {len(annotations)} predictions -> {args.out}")
    return 0


def _cmd_ema(args) -> int:
    teacher = ema_averager.load_parameters(args.teacher)
    student = ema_averager.load_parameters(args.student)
    updated = ema_averager.ema_update(
        teacher, student, ema_averager.EmaConfig(alpha=args.alpha)
    )
    ema_averager.save_parameters(updated, args.out)
    print(f"updated {len(updated)} parameter arrays at alpha={args.alpha}")
    return 0


def _cmd_losses(args) -> int:
    doc = json.loads(Path(args.pairs).read_text(encoding="utf-8"))
    lam_ce, lam_bce, lam_dice = (float(v) for v in args.weights.split(","))
    weights = loss_math.LossWeights(
        lambda_ce=lam_ce, lambda_bce=lam_bce, lambda_dice=lam_dice
    )
    from .mask_core import rle_decode

    pairs = []
    for rec in doc["pairs"]:
        pairs.append(
            (
                np.asarray(rec["pred_probs"], dtype=np.float64),
                rec["class_probs"],
                rle_decode(rec["gt_rle"]),
                int(rec["gt_class"]),
            )
        )
    for i, (pred, class_probs, gt_mask, gt_class) in enumerate(pairs):
        ce_v = loss_math.ce(class_probs, gt_class)
        bce_v = loss_math.bce(pred, gt_mask)
        dice_v = loss_math.dice(pred, gt_mask)
        total = (
            weights.lambda_ce * ce_v
            + weights.lambda_bce * bce_v
            + weights.lambda_dice * dice_v
        )
        print(
            f"pair {i}: ce={ce_v:.6f} bce={bce_v:.6f} dice={dice_v:.6f} "
            f"total={total:.6f}"
        )
    print(f"aggregate seg_loss={loss_math.seg_loss(pairs, weights):.6f}")
    return 0


def _format_eval_table(report: eval_ap.EvalReport, map50_only: bool) -> str:
    class_order = list(range(1, 9))
    header = " & ".join(CLASS_COLUMNS + (["mAP50"] if map50_only else ["mAP", "mAP50"]))
    cells = []
    for class_id in class_order:
        entry = report.per_class.get(class_id)
        key = "ap50" if map50_only else "ap"
        cells.append(f"{entry[key] * 100:.1f}" if entry else "-")
    if map50_only:
        cells.append(f"{report.map50 * 100:.1f}")
    else:
        cells.extend([f"{report.map * 100:.1f}", f"{report.map50 * 100:.1f}"])
    return header + "\n" + " & ".join(cells)


def _cmd_eval(args) -> int:
    pred = load_dataset(args.pred)
    gt = load_dataset(args.gt)
    cfg = (
        eval_ap.EvalConfig(iou_thresholds=(0.5,))
        if args.map50_only
        else eval_ap.EvalConfig()
    )
    report = eval_ap.evaluate(pred, gt, cfg)
    print(_format_eval_table(report, args.map50_only))
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
        )
        print(f"wrote {args.out}")
    return 0


def _load_pipeline_config(path: str | None, seed_override: int | None) -> PipelineConfig:
    if path:
        cfg = PipelineConfig.from_dict(
            json.loads(Path(path).read_text(encoding="utf-8"))
        )
    else:
        cfg = PipelineConfig()
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        cfg = replace(cfg, seed=int(env_seed))
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    return cfg


def _cmd_stage2_sim(args) -> int:
    cfg = _load_pipeline_config(args.config, args.seed)
    events = run_stage2_sim(cfg, args.source_dir, args.target_dir, args.iters, args.out_dir)
    print(f"ran {args.iters} iterations, {len(events.records)} events -> {args.out_dir}")
    return 0


def _cmd_pseudo_dataset(args) -> int:
    target_ds, target_images = load_image_dir(args.target_dir)
    group_a = GROUPS_BY_NAME[args.group_a_name]
    group_b = GROUPS_BY_NAME[args.group_b_name]
    pred_a = FilePredictor.from_document(args.pred_a, group=group_a)
    pred_b = FilePredictor.from_document(args.pred_b, group=group_b)
    cfg = PipelineConfig(filter=FilterConfig(tau=args.tau))
    pairs = [(im, target_images[im.id]) for im in target_ds.images]
    dataset = export_pseudo_dataset(pairs, pred_a, pred_b, cfg, group_a, group_b)
    save_dataset(dataset, args.out)
    print(
        f"exported {len(dataset.annotations)} pseudo-labels over "
        f"{len(dataset.images)} images -> {args.out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="udamix",
        description="Cross-domain mixing and pseudo-labeling toolbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a toy source/target domain")
    p.add_argument("--config", help="ToySceneConfig JSON (defaults when omitted)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--domain", choices=["source", "target"], required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--instance-ids", action="store_true")
    p.set_defaults(func=_cmd_gen_toy)

    p = sub.add_parser("colortransfer", help="match Lab statistics to a target")
    p.add_argument("--source", required=True)
    p.add_argument("--target")
    p.add_argument("--stats", help="dataset-level stats JSON instead of --target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_colortransfer)

    p = sub.add_parser("mix", help="cut-and-paste mixing over two image dirs")
    p.add_argument("--source-dir", required=True)
    p.add_argument("--target-dir", required=True)
    p.add_argument("--pseudo", required=True, help="target pseudo-label document")
    p.add_argument("--direction", choices=["s2t", "t2s"], required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--area-threshold", type=int, default=1500)
    p.add_argument("--group", choices=["human-cycle", "vehicle", "all"], default="all")
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("filter", help="confidence-threshold predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("fuse", help="merge two group models' predictions")
    p.add_argument("--group-a", required=True)
    p.add_argument("--group-b", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("ema", help="moving-average update of parameter files")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True)
    p.add_argument("--alpha", type=float, default=0.999)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ema)

    p = sub.add_parser("losses", help="report per-pair and aggregate losses")
    p.add_argument("--pairs", required=True, help="pairs JSON document")
    p.add_argument("--weights", default="2,5,5", help="lambda_ce,lambda_bce,lambda_dice")
    p.set_defaults(func=_cmd_losses)

    p = sub.add_parser("eval", help="COCO-protocol AP evaluation")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--map50-only", action="store_true")
    p.add_argument("--out", help="machine-readable report JSON")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stage2-sim", help="run the stage-2 dataflow with the mock teacher")
    p.add_argument("--config", help="PipelineConfig JSON")
    p.add_argument("--source-dir", required=True)
    p.add_argument("--target-dir", required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_stage2_sim)

    p = sub.add_parser("pseudo-dataset", help="filter + fuse two prediction documents")
    p.add_argument("--target-dir", required=True)
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--group-a-name", default="human-cycle")
    p.add_argument("--group-b-name", default="vehicle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pseudo_dataset)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
