"""Training loops: baseline detector training and staged domain adaptation.

All randomness flows from the experiment seed through named substreams
(split, shuffle, flip, sample, init) so any component can be replayed in
isolation and two runs with the same config are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import schedule as sched
from .dataset_io import load_dataset, split_image_ids
from .detector import Detector, DetectorConfig
from .evaluation import evaluate_detector, forgetting_report
from .geometry import xywh_to_xyxy
from .optim import OptimizerConfig, sgd_step
from .rng import substream
from .scenes import horizontal_flip

logger = logging.getLogger("incrdet")

CONFIG_FORMAT_VERSION = 1
LOG_EVERY = 50


class NumericalError(RuntimeError):
    """Training hit a non-finite loss; carries the offending batch context."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class ConfigError(ValueError):
    pass


@dataclass
class BaselineConfig:
    domain: str = "S"
    epochs: int = 5
    batch_size: int = 4
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 4e-5
    clr_max: float = 6e-3
    clr_step_size: int | None = None

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("baseline.epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("baseline.batch_size must be >= 1")
        if self.lr <= 0 or self.clr_max < self.lr:
            raise ConfigError("baseline needs 0 < lr <= clr_max")


@dataclass
class AdaptConfig:
    domain: str = "T"
    batch_size: int = 16
    preset: str | None = "table3_row4"
    plan: sched.SchedulePlan | None = None

    def resolve_plan(self) -> sched.SchedulePlan:
        if self.plan is not None:
            return self.plan
        if self.preset is None:
            raise ConfigError("adaptation needs either a preset name or an inline plan")
        return sched.preset(self.preset, target_head=f"head.{self.domain}")

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("adaptation.batch_size must be >= 1")
        plan = self.resolve_plan()
        head = f"head.{self.domain}"
        mentioned = set().union(*(s.active_components for s in plan.stages))
        if head not in mentioned:
            raise ConfigError(
                f"adaptation plan never trains '{head}'; nothing targets domain "
                f"'{self.domain}'")


@dataclass
class EvalConfig:
    score_threshold: float = 0.05
    nms_threshold: float = 0.5


@dataclass
class ExperimentConfig:
    seed: int = 0
    datasets: dict = field(default_factory=dict)
    val_fraction: float = 0.2
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    adaptation: AdaptConfig = field(default_factory=AdaptConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        version = data.get("format_version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise ConfigError(f"unsupported config format_version {version!r}")
        try:
            baseline = BaselineConfig(**data.get("baseline", {}))
            adapt_raw = dict(data.get("adaptation", {}))
            if "plan" in adapt_raw and adapt_raw["plan"] is not None:
                adapt_raw["plan"] = sched.plan_from_dict(adapt_raw["plan"])
            adaptation = AdaptConfig(**adapt_raw)
            eval_cfg = EvalConfig(**data.get("eval", {}))
            cfg = cls(seed=int(data.get("seed", 0)),
                      datasets=dict(data.get("datasets", {})),
                      val_fraction=float(data.get("val_fraction", 0.2)),
                      baseline=baseline, adaptation=adaptation, eval=eval_cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc
        cfg.baseline.validate()
        if not 0.0 < cfg.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def config_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _category_map(detector: Detector, domain: str) -> dict:
    info = detector.domains[domain]
    return {cid: local + 1 for local, cid in enumerate(info.category_ids)}


def load_batch(dataset, image_ids, cat_map, image_size, flip_rng=None):
    """Assemble one training batch with optional seeded horizontal flips."""
    images = np.zeros((len(image_ids), 3, image_size, image_size))
    gt_boxes, gt_labels = [], []
    for k, image_id in enumerate(image_ids):
        img = dataset.load_image(image_id)
        anns = dataset.annotations_by_image[image_id]
        if flip_rng is not None and flip_rng.random() < 0.5:
            img, anns = horizontal_flip(img, anns)
        images[k] = img.transpose(2, 0, 1)
        if anns:
            gt_boxes.append(np.stack([xywh_to_xyxy(a["bbox"]) for a in anns]))
            gt_labels.append(np.array([cat_map[a["category_id"]] for a in anns],
                                      dtype=np.int64))
        else:
            gt_boxes.append(np.zeros((0, 4)))
            gt_labels.append(np.zeros(0, dtype=np.int64))
    return images, gt_boxes, gt_labels


def train_stage(detector: Detector, dataset, train_ids, domain: str,
                stage: sched.StagePlan, opt_config: OptimizerConfig,
                batch_size: int, root_seed: int, tag: str) -> int:
    """Run one schedule stage; returns the number of optimizer steps."""
    groups = sched.build_param_groups(detector, stage)
    active = stage.active_components
    by_name = {c.component: c for c in stage.components}
    cat_map = _category_map(detector, domain)
    image_size = detector.config.image_size
    iters_per_epoch = max(1, math.ceil(len(train_ids) / batch_size))
    step_size = stage.clr_step_size or 2 * iters_per_epoch

    iteration = 0
    for epoch in range(stage.epochs):
        order = substream(root_seed, "shuffle", tag, epoch).permutation(len(train_ids))
        for start in range(0, len(train_ids), batch_size):
            batch_ids = [train_ids[i] for i in order[start:start + batch_size]]
            flip_rng = substream(root_seed, "flip", tag, epoch, start)
            sample_rng = substream(root_seed, "sample", tag, epoch, start)
            images, gt_boxes, gt_labels = load_batch(
                dataset, batch_ids, cat_map, image_size, flip_rng)

            global_lr = sched.triangular_clr(iteration, stage.clr_base,
                                             stage.clr_max, step_size)
            for group in groups:
                if not group.frozen:
                    group.lr = sched.scaled_group_lr(global_lr, by_name[group.name], stage)

            loss, grads, _ = detector.training_step_loss(
                images, gt_boxes, gt_labels, domain, sample_rng, active)
            if not np.isfinite(loss.l_det):
                raise NumericalError(
                    f"non-finite loss at {tag} epoch {epoch} iteration {iteration}",
                    {"tag": tag, "epoch": epoch, "iteration": iteration,
                     "image_ids": batch_ids, "l_cls": loss.l_cls, "l_reg": loss.l_reg})
            sgd_step(groups, grads, opt_config)
            if iteration % LOG_EVERY == 0:
                logger.info("%s epoch %d iter %d lr %.2e l_cls %.4f l_reg %.4f l_det %.4f",
                            tag, epoch, iteration, global_lr,
                            loss.l_cls, loss.l_reg, loss.l_det)
            iteration += 1
    return iteration


def baseline_stage(cfg: BaselineConfig) -> sched.StagePlan:
    """Baseline trains every shared component and the source head at one
    CLR-driven rate."""
    components = [("backbone", cfg.lr), ("fpn", cfg.lr), ("rpn", cfg.lr),
                  (f"head.{cfg.domain}", cfg.lr)]
    return sched.StagePlan(
        epochs=max(cfg.epochs, 1),
        components=tuple(sched.ComponentLR(n, lr) for n, lr in components),
        clr_base=cfg.lr, clr_max=cfg.clr_max, clr_step_size=cfg.clr_step_size)


def dataset_categories(dataset):
    return [c["id"] for c in sorted(dataset.categories, key=lambda c: c["id"])]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))


def train_baseline(cfg: ExperimentConfig, config_text: str, out_dir,
                   detector_config: DetectorConfig | None = None) -> dict:
    """Train the baseline on the source domain and write run artifacts.

    Writes checkpoint_stage_0.{json,bin}, manifest.json and a
    timings.json sidecar (wall clock stays out of the manifest so reruns
    are byte-identical).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domain = cfg.baseline.domain
    dataset = load_dataset(cfg.datasets[domain])
    train_ids, val_ids = split_image_ids(
        dataset.image_ids, cfg.val_fraction, substream(cfg.seed, "split", domain))

    detector = Detector(config=detector_config or DetectorConfig(), seed=cfg.seed)
    detector.register_domain(domain, dataset_categories(dataset))

    opt = OptimizerConfig(momentum=cfg.baseline.momentum,
                          weight_decay=cfg.baseline.weight_decay)
    started = time.monotonic()
    steps = 0
    if cfg.baseline.epochs > 0:
        steps = train_stage(detector, dataset, train_ids, domain,
                            baseline_stage(cfg.baseline), opt,
                            cfg.baseline.batch_size, cfg.seed, "baseline")
    elapsed = time.monotonic() - started

    ckpt = out / "checkpoint_stage_0"
    detector.save(ckpt, extra_meta={"val_fraction": cfg.val_fraction,
                                    "stage": "baseline"})
    manifest = {
        "format_version": 1,
        "kind": "train",
        "toolkit_version": __version__,
        "config_sha256": config_sha256(config_text),
        "config_text": config_text,
        "stages": [{"name": "baseline", "checkpoint": "checkpoint_stage_0",
                    "optimizer_steps": steps}],
    }
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timings.json", {"baseline_seconds": round(elapsed, 3)})
    return manifest


def run_adaptation(cfg: ExperimentConfig, config_text: str, baseline_checkpoint,
                   out_dir) -> dict:
    """Execute the staged adaptation plan from a baseline checkpoint.

    Registers the target head, trains each stage, checkpoints after each
    stage, evaluates source and target at every checkpoint and writes
    the forgetting report.
    """
    cfg.adaptation.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = cfg.adaptation.domain
    source = cfg.baseline.domain
    plan = cfg.adaptation.resolve_plan()

    detector = Detector.load(baseline_checkpoint)
    if source not in detector.domains:
        raise ConfigError(
            f"baseline checkpoint lacks source domain '{source}'; has "
            f"{sorted(detector.domains)}")

    t_dataset = load_dataset(cfg.datasets[target])
    t_train, t_val = split_image_ids(
        t_dataset.image_ids, cfg.val_fraction, substream(cfg.seed, "split", target))
    s_dataset = load_dataset(cfg.datasets[source])
    _, s_val = split_image_ids(
        s_dataset.image_ids, cfg.val_fraction, substream(cfg.seed, "split", source))

    detector.register_domain(target, dataset_categories(t_dataset))
    opt = OptimizerConfig(momentum=cfg.baseline.momentum,
                          weight_decay=cfg.baseline.weight_decay)

    stage_names = ["baseline"]
    checkpoint_paths = [out / "checkpoint_stage_0"]
    detector.save(checkpoint_paths[0],
                  extra_meta={"val_fraction": cfg.val_fraction, "stage": "baseline"})
    timings = {}
    for k, stage in enumerate(plan.stages, start=1):
        started = time.monotonic()
        train_stage(detector, t_dataset, t_train, target, stage, opt,
                    cfg.adaptation.batch_size, cfg.seed, f"adapt_stage_{k}")
        timings[f"stage_{k}_seconds"] = round(time.monotonic() - started, 3)
        path = out / f"checkpoint_stage_{k}"
        detector.save(path, extra_meta={"val_fraction": cfg.val_fraction,
                                        "stage": f"stage_{k}"})
        stage_names.append(f"stage_{k}")
        checkpoint_paths.append(path)

    report = forgetting_report(
        stage_names, checkpoint_paths,
        (s_dataset, s_val, source), (t_dataset, t_val, target))
    for k, stage_entry in enumerate(report.stages):
        _write_json(out / f"eval_{source}_stage_{k}.json", stage_entry["S"].to_json_dict())
        _write_json(out / f"eval_{target}_stage_{k}.json", stage_entry["T"].to_json_dict())
    (out / "report.txt").write_text(report.format_text() + "\n")
    (out / "report.json").write_text(report.to_json())

    manifest = {
        "format_version": 1,
        "kind": "adapt",
        "toolkit_version": __version__,
        "config_sha256": config_sha256(config_text),
        "config_text": config_text,
        "stages": [
            {
                "name": name,
                "checkpoint": str(path.name),
                "eval": {
                    source: f"eval_{source}_stage_{k}.json",
                    target: f"eval_{target}_stage_{k}.json",
                },
                "delta_S_at_0.50": report.delta_source(k),
            }
            for k, (name, path) in enumerate(zip(stage_names, checkpoint_paths))
        ],
    }
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timings.json", timings)
    return manifest


def evaluate_checkpoint(checkpoint_path, dataset_path, domain: str,
                        split: str = "val", score_threshold=None,
                        nms_threshold=None):
    """Evaluate a checkpoint on a dataset split; returns (EvalTable, ids)."""
    detector = Detector.load(checkpoint_path)
    if domain not in detector.domains:
        raise KeyError(
            f"domain '{domain}' not present in checkpoint; available: "
            f"{sorted(detector.domains)}")
    dataset = load_dataset(dataset_path)
    seed = int(detector.meta.get("seed", 0))
    val_fraction = float(detector.meta.get("val_fraction", 0.2))
    train_ids, val_ids = split_image_ids(
        dataset.image_ids, val_fraction, substream(seed, "split", domain))
    ids = {"train": train_ids, "val": val_ids, "all": dataset.image_ids}[split]
    if not ids:
        raise ValueError(f"split '{split}' of {dataset_path} is empty")
    table = evaluate_detector(detector, dataset, ids, domain,
                              score_threshold, nms_threshold)
    return table, ids
