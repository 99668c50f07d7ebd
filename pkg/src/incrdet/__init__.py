"""Desk-scale incremental object detection toolkit.

A two-stage detector (shared backbone / feature pyramid / RPN, one ROI
head per domain) built on hand-differentiated numpy layers, plus the
finetuning machinery for adapting it to new domains without forgetting:
per-component learning rates, gradual unfreezing and a triangular
cyclical learning rate.  Includes a deterministic synthetic two-domain
benchmark and a COCO-style mAP evaluator with a forgetting report.
"""

__version__ = "0.1.0"

from . import geometry  # noqa: F401
from .detector import Detection, Detector, DetectorConfig, DetectionLoss  # noqa: F401
from .evaluation import EvalTable, ForgettingReport, coco_map, evaluate_detector  # noqa: F401
from .optim import OptimizerConfig, ParamGroup, sgd_step  # noqa: F401
from .schedule import (ComponentLR, SchedulePlan, StagePlan,  # noqa: F401
                       build_param_groups, preset, scaled_group_lr, triangular_clr)
from .scenes import SceneSpec, default_spec, generate_scene, horizontal_flip  # noqa: F401
