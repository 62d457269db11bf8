"""Cross-domain data mixing, pseudo-label fusion, and evaluation
toolkit for instance segmentation domain adaptation.

The package provides the deterministic algorithmic core of a
teacher-student self-training pipeline: bidirectional cut-and-paste
mixing with instance/patch routing, CIELAB color alignment, rare-class
rebalancing, pseudo-label filtering and cross-group fusion, teacher
parameter averaging, loss arithmetic, COCO-protocol AP evaluation, and
a procedural toy-domain generator for end-to-end desk-scale checks.
Neural training itself is delegated to external tools through the
documented file formats.
"""

from . import (  # noqa: F401
    cli,
    colorspace,
    dataset_io,
    ema_averager,
    eval_ap,
    loss_math,
    mask_core,
    mixing_engine,
    pipeline,
    pseudo_labeler,
    rare_class_balancer,
    toygen,
)

__version__ = "0.1.0"
