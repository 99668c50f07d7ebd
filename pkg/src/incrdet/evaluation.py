"""Detection evaluation: greedy matching, 101-point AP, mAP tables and
the cross-domain forgetting report.

Detections and ground truths are dicts with ``image_id``,
``category_id`` and a corner-form ``box``; detections add ``score``.
mAP cells are keyed by (IoU spec, area bucket).  Area buckets filter the
ground truth by box area; detections whose only match is an
out-of-bucket GT are dropped from scoring rather than counted as false
positives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry

# COCO-style buckets rescaled for 128 px images: 32^2 and 96^2 shrink to
# 12^2 and 32^2.
AREA_BUCKETS = {
    "all": (0.0, float("inf")),
    "small": (0.0, 144.0),
    "medium": (144.0, 1024.0),
    "large": (1024.0, float("inf")),
}

IOU_SPECS = {
    "0.50": (0.50,),
    "0.75": (0.75,),
    "0.50:0.95": tuple(np.round(np.arange(0.50, 0.96, 0.05), 2)),
}

# Row order of the published baseline tables; everything else we compute
# is an extension row.
PAPER_ROWS = (
    ("0.50", "all"),
    ("0.75", "all"),
    ("0.50:0.95", "medium"),
    ("0.50:0.95", "large"),
    ("0.50:0.95", "all"),
)


@dataclass(frozen=True)
class EvalTable:
    """mAP percentages keyed by (iou_spec, area bucket)."""

    cells: dict

    def value(self, iou_key: str, area_key: str) -> float:
        return self.cells[(iou_key, area_key)]

    def to_json_dict(self) -> dict:
        return {f"{iou}|{area}": v for (iou, area), v in sorted(self.cells.items())}

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvalTable":
        cells = {}
        for key, v in data.items():
            iou, area = key.split("|")
            cells[(iou, area)] = float(v)
        return cls(cells=cells)

    def format_text(self) -> str:
        lines = ["IoU | Area | mAP(%)"]
        for iou, area in PAPER_ROWS:
            lines.append(f"{iou} | {area} | {self.cells[(iou, area)]:.2f}")
        for key in sorted(self.cells):
            if key not in PAPER_ROWS:
                iou, area = key
                lines.append(f"{iou} | {area} | {self.cells[key]:.2f}  (extension)")
        return "\n".join(lines)


def match_detections(det_boxes: np.ndarray, gt_boxes: np.ndarray,
                     iou_threshold: float) -> np.ndarray:
    """Greedy TP/FP flags for one image and one class.

    ``det_boxes`` must already be sorted by descending score.  Each
    detection takes its best-IoU unmatched GT; it is a TP when that IoU
    clears the threshold, and the GT is then consumed.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    flags = np.zeros(det_boxes.shape[0], dtype=bool)
    if det_boxes.shape[0] == 0 or gt_boxes.shape[0] == 0:
        return flags
    iou = geometry.pairwise_iou(det_boxes, gt_boxes)
    taken = np.zeros(gt_boxes.shape[0], dtype=bool)
    for d in range(det_boxes.shape[0]):
        free = np.flatnonzero(~taken)
        if free.size == 0:
            break
        best = free[np.argmax(iou[d, free])]
        if iou[d, best] >= iou_threshold:
            flags[d] = True
            taken[best] = True
    return flags


def _match_with_ignores(iou: np.ndarray, gt_ignore: np.ndarray,
                        iou_threshold: float) -> np.ndarray:
    """Flags per detection: 1 TP, 0 FP, -1 ignored (out-of-bucket match)."""
    n_det, n_gt = iou.shape
    flags = np.zeros(n_det, dtype=np.int8)
    taken = np.zeros(n_gt, dtype=bool)
    scored = ~gt_ignore
    for d in range(n_det):
        free = np.flatnonzero(scored & ~taken)
        matched = False
        if free.size:
            best = free[np.argmax(iou[d, free])]
            if iou[d, best] >= iou_threshold:
                flags[d] = 1
                taken[best] = True
                matched = True
        if not matched:
            ignored = np.flatnonzero(gt_ignore)
            if ignored.size and np.max(iou[d, ignored]) >= iou_threshold:
                flags[d] = -1
    return flags


def average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from rank-ordered TP flags.

    ``tp_flags`` must be ordered by descending score across all images.
    Returns 0 when there is no ground truth.
    """
    if n_gt < 0:
        raise ValueError(f"n_gt must be >= 0, got {n_gt}")
    if n_gt == 0:
        return 0.0
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if tp_flags.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp_flags)
    ranks = np.arange(1, tp_flags.size + 1)
    precision = cum_tp / ranks
    recall = cum_tp / n_gt
    # precision envelope: max precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, grid, side="left")
    interp = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(interp.mean())


def _box_area(box) -> float:
    return float((box[2] - box[0]) * (box[3] - box[1]))


def coco_map(detections, ground_truth, area_buckets=None, iou_specs=None) -> EvalTable:
    """mAP table over IoU specs and area buckets.

    mAP is the mean AP over categories that have at least one in-bucket
    ground truth; categories present only in detections contribute
    nothing to the mean.  An unknown category in the detections is a
    hard error.
    """
    area_buckets = AREA_BUCKETS if area_buckets is None else area_buckets
    iou_specs = IOU_SPECS if iou_specs is None else iou_specs

    gt_categories = sorted({g["category_id"] for g in ground_truth})
    known = set(gt_categories)
    for det in detections:
        if det["category_id"] not in known:
            raise ValueError(
                f"detection carries unknown category_id {det['category_id']}; "
                f"ground-truth categories: {gt_categories}")

    # group once per category/image; IoU matrices are shared by all cells
    per_cat: dict = {c: {} for c in gt_categories}
    for g in ground_truth:
        per_cat[g["category_id"]].setdefault(g["image_id"], {"gts": [], "dets": []})
        per_cat[g["category_id"]][g["image_id"]]["gts"].append(g)
    for index, det in enumerate(detections):
        bucket = per_cat[det["category_id"]].setdefault(
            det["image_id"], {"gts": [], "dets": []})
        bucket["dets"].append((index, det))

    thresholds = sorted({t for spec in iou_specs.values() for t in spec})
    all_aps: dict = {}
    for cat in gt_categories:
        images = per_cat[cat]
        prepared = []
        for image_id in sorted(images):
            entry = images[image_id]
            dets = sorted(entry["dets"], key=lambda d: (-d[1]["score"], d[0]))
            det_boxes = np.array([d[1]["box"] for d in dets], dtype=np.float64).reshape(-1, 4)
            det_keys = [(-d[1]["score"], d[1]["image_id"], d[0]) for d in dets]
            gt_areas = np.array([_box_area(g["box"]) for g in entry["gts"]])
            gt_boxes = np.array([g["box"] for g in entry["gts"]],
                                dtype=np.float64).reshape(-1, 4)
            iou = geometry.pairwise_iou(det_boxes, gt_boxes) \
                if det_boxes.size and gt_boxes.size else np.zeros((len(dets), len(entry["gts"])))
            prepared.append((det_keys, iou, gt_areas))

        for area_key, (lo, hi) in area_buckets.items():
            n_gt = 0
            per_threshold_records: dict = {t: [] for t in thresholds}
            for det_keys, iou, gt_areas in prepared:
                gt_ignore = ~((gt_areas >= lo) & (gt_areas < hi))
                n_gt += int(np.sum(~gt_ignore))
                for t in thresholds:
                    flags = _match_with_ignores(iou, gt_ignore, t)
                    for key, flag in zip(det_keys, flags):
                        if flag >= 0:
                            per_threshold_records[t].append((key, flag == 1))
            for t in thresholds:
                records = sorted(per_threshold_records[t], key=lambda r: r[0])
                flags = np.array([r[1] for r in records], dtype=bool)
                all_aps[(cat, area_key, t)] = (average_precision(flags, n_gt), n_gt)

    cells = {}
    for iou_key, spec in iou_specs.items():
        for area_key in area_buckets:
            values = []
            for cat in gt_categories:
                aps = [all_aps[(cat, area_key, t)] for t in spec]
                if aps[0][1] == 0:
                    continue  # no in-bucket ground truth for this class
                values.append(float(np.mean([a for a, _ in aps])))
            cells[(iou_key, area_key)] = round(100.0 * float(np.mean(values)), 2) \
                if values else 0.0
    return EvalTable(cells=cells)


def detections_to_records(dets, image_id: int):
    """Convert Detection objects for one image into evaluator records."""
    return [
        {"image_id": image_id, "category_id": d.category_id,
         "box": [float(v) for v in d.box], "score": d.score}
        for d in dets
    ]


def dataset_ground_truth(dataset, image_ids):
    """Ground-truth records for the given images of a loaded dataset."""
    records = []
    for image_id in image_ids:
        for ann in dataset.annotations_by_image[image_id]:
            x, y, w, h = ann["bbox"]
            records.append({
                "image_id": image_id,
                "category_id": ann["category_id"],
                "box": [float(x), float(y), float(x + w), float(y + h)],
            })
    return records


def evaluate_detector(det, dataset, image_ids, domain: str,
                      score_threshold=None, nms_threshold=None) -> EvalTable:
    """Run detection over a split and compute its mAP table."""
    if not image_ids:
        raise ValueError("cannot evaluate on an empty image list")
    detections = []
    for image_id in image_ids:
        image = dataset.load_image(image_id)
        found = det.detect(image, domain, score_threshold, nms_threshold)
        detections.extend(detections_to_records(found, image_id))
    ground_truth = dataset_ground_truth(dataset, image_ids)
    return coco_map(detections, ground_truth)


@dataclass
class ForgettingReport:
    """Per-stage source/target tables plus the source-domain drift."""

    source_domain: str
    target_domain: str
    stages: list = field(default_factory=list)  # {"stage", "S": EvalTable, "T": EvalTable}

    def delta_source(self, stage_index: int) -> float:
        base = self.stages[0]["S"].value("0.50", "all")
        return round(self.stages[stage_index]["S"].value("0.50", "all") - base, 2)

    def to_json_dict(self) -> dict:
        return {
            "source_domain": self.source_domain,
            "target_domain": self.target_domain,
            "stages": [
                {
                    "stage": s["stage"],
                    "S": s["S"].to_json_dict(),
                    "T": s["T"].to_json_dict(),
                    "delta_S_at_0.50": self.delta_source(i),
                }
                for i, s in enumerate(self.stages)
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ForgettingReport":
        report = cls(source_domain=data["source_domain"],
                     target_domain=data["target_domain"])
        for s in data["stages"]:
            report.stages.append({
                "stage": s["stage"],
                "S": EvalTable.from_json_dict(s["S"]),
                "T": EvalTable.from_json_dict(s["T"]),
            })
        return report

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1, sort_keys=True)

    def format_text(self) -> str:
        src, tgt = self.source_domain, self.target_domain
        lines = [f"Adaptation report: source {src}, target {tgt}",
                 "stage | eval | mAP@0.50/all | mAP@0.50:0.95/all | delta_S@0.50"]
        for i, s in enumerate(self.stages):
            t_s, t_t = s["S"], s["T"]
            lines.append(
                f"{s['stage']} | {src} | {t_s.value('0.50', 'all'):.2f} | "
                f"{t_s.value('0.50:0.95', 'all'):.2f} | {self.delta_source(i):+.2f}")
            lines.append(
                f"{s['stage']} | {tgt} | {t_t.value('0.50', 'all'):.2f} | "
                f"{t_t.value('0.50:0.95', 'all'):.2f} | ")
        return "\n".join(lines)


def forgetting_report(stage_names, checkpoint_paths, s_eval, t_eval) -> ForgettingReport:
    """Evaluate source and target at every stage checkpoint.

    ``s_eval`` / ``t_eval`` are (dataset, image_ids, domain) triples; the
    first checkpoint is the pre-adaptation baseline.  Missing checkpoints
    or empty validation splits are hard errors.
    """
    from .detector import Detector  # local import to keep module load light
    from pathlib import Path

    if len(stage_names) != len(checkpoint_paths):
        raise ValueError("stage_names and checkpoint_paths must align")
    for path in checkpoint_paths:
        if not Path(path).with_suffix(".json").exists():
            raise FileNotFoundError(f"missing stage checkpoint {path}")
    s_dataset, s_ids, s_domain = s_eval
    t_dataset, t_ids, t_domain = t_eval
    if not s_ids or not t_ids:
        raise ValueError("validation splits must be non-empty for both domains")

    report = ForgettingReport(source_domain=s_domain, target_domain=t_domain)
    for name, path in zip(stage_names, checkpoint_paths):
        det = Detector.load(path)
        report.stages.append({
            "stage": name,
            "S": evaluate_detector(det, s_dataset, s_ids, s_domain),
            "T": evaluate_detector(det, t_dataset, t_ids, t_domain),
        })
    return report
