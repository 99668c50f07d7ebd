"""Two-stage detector with a shared trunk and per-domain ROI heads.

The backbone, lateral (fpn) convs and RPN are shared by every domain;
each registered domain owns one ROI head that is the only head consulted
for that domain's images.  Components are addressable as "backbone",
"fpn", "rpn" and "head.<name>" for freezing and per-group learning
rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry
from .backbone import Backbone, Laterals, PYRAMID_STRIDES
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Linear, ReLU
from .losses import binary_cross_entropy_with_logits, smooth_l1, softmax_cross_entropy
from .rng import substream
from .rpn import (RPNHead, assign_rpn_targets, build_level_anchors,
                  proposals_from_outputs, sample_targets)


@dataclass(frozen=True)
class DetectorConfig:
    image_size: int = 128
    stem_channels: int = 16
    block_channels: tuple = (16, 32, 32, 32)
    fpn_channels: int = 32
    # 5 sizes x 3 ratios; each pyramid level handles one size band
    level_sizes: tuple = ((8.0,), (16.0,), (32.0,), (64.0, 96.0))
    anchor_ratios: tuple = (0.5, 1.0, 2.0)
    rpn_pre_nms_topk: int = 256
    rpn_post_nms_topk: int = 64
    rpn_nms_threshold: float = 0.7
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_sample_pos: int = 32
    rpn_sample_neg: int = 32
    roi_pos_iou: float = 0.5
    roi_sample_pos: int = 16
    roi_sample_neg: int = 48
    head_hidden: int = 128
    pool_size: int = 4
    canonical_box_size: float = 56.0
    delta_clamp: float = geometry.DEFAULT_DELTA_CLAMP
    smooth_l1_beta: float = 1.0
    score_threshold: float = 0.05
    nms_threshold: float = 0.5
    max_detections: int = 100

    @property
    def anchor_sizes(self) -> tuple:
        return tuple(s for level in self.level_sizes for s in level)


@dataclass(frozen=True)
class DomainInfo:
    index: int
    name: str
    category_ids: tuple

    @property
    def num_classes(self) -> int:
        return len(self.category_ids)


@dataclass(frozen=True)
class Detection:
    box: np.ndarray
    class_id: int
    category_id: int
    score: float
    domain: str


@dataclass(frozen=True)
class DetectionLoss:
    l_cls: float
    l_reg: float
    l_det: float


@dataclass
class LossPlan:
    """Targets frozen for one batch: sampled anchors, proposal boxes and
    ROI labels are constants so the loss is a pure function of weights."""

    rpn_sample_idx: list = field(default_factory=list)
    rpn_sample_labels: list = field(default_factory=list)
    rpn_pos_idx: list = field(default_factory=list)
    rpn_pos_deltas: list = field(default_factory=list)
    roi_boxes: list = field(default_factory=list)
    roi_labels: list = field(default_factory=list)
    roi_pos_rows: list = field(default_factory=list)
    roi_pos_deltas: list = field(default_factory=list)


ALL_COMPONENTS = ("backbone", "fpn", "rpn")  # plus head.<domain> at runtime


class RoiHead:
    """Two hidden linear layers, then class logits and per-class deltas."""

    def __init__(self, rng_for, name: str, in_features: int, hidden: int, num_classes: int):
        self.name = name
        self.num_classes = num_classes
        self.fc1 = Linear("fc1", in_features, hidden, rng_for("fc1"))
        self.fc2 = Linear("fc2", hidden, hidden, rng_for("fc2"))
        self.cls = Linear("cls", hidden, num_classes + 1, rng_for("cls"))
        self.reg = Linear("reg", hidden, 4 * num_classes, rng_for("reg"))
        self.relu = ReLU()

    def forward(self, x: np.ndarray):
        h1, c1 = self.fc1.forward(x)
        a1, r1 = self.relu.forward(h1)
        h2, c2 = self.fc2.forward(a1)
        a2, r2 = self.relu.forward(h2)
        logits, c_cls = self.cls.forward(a2)
        reg, c_reg = self.reg.forward(a2)
        reg = reg.reshape(x.shape[0], self.num_classes, 4)
        return logits, reg, (c1, r1, c2, r2, c_cls, c_reg)

    def backward(self, cache, grad_logits, grad_reg, need_input_grad: bool):
        c1, r1, c2, r2, c_cls, c_reg = cache
        grad_reg = grad_reg.reshape(grad_reg.shape[0], 4 * self.num_classes)
        g_a2_cls, g_cls = self.cls.backward(c_cls, grad_logits)
        g_a2_reg, g_reg = self.reg.backward(c_reg, grad_reg)
        g_h2, _ = self.relu.backward(r2, g_a2_cls + g_a2_reg)
        g_a1, g_fc2 = self.fc2.backward(c2, g_h2)
        g_h1, _ = self.relu.backward(r1, g_a1)
        g_x, g_fc1 = self.fc1.backward(c1, g_h1)
        prefix = f"head.{self.name}"
        grads = {}
        for lname, lgrads in (("fc1", g_fc1), ("fc2", g_fc2), ("cls", g_cls), ("reg", g_reg)):
            for pname, arr in lgrads.items():
                grads[f"{prefix}/{lname}/{pname}"] = arr
        return grads, (g_x if need_input_grad else None)

    def param_paths(self):
        out = {}
        for layer in (self.fc1, self.fc2, self.cls, self.reg):
            for pname, arr in layer.params.items():
                out[f"head.{self.name}/{layer.name}/{pname}"] = arr
        return out

    def no_decay_paths(self):
        paths = set()
        for layer in (self.fc1, self.fc2, self.cls, self.reg):
            paths |= {f"head.{self.name}/{layer.name}/{p}" for p in layer.no_decay}
        return paths


class Detector:
    """Shared backbone/FPN/RPN with N registered domain heads."""

    def __init__(self, config: DetectorConfig | None = None, seed: int = 0):
        self.config = config or DetectorConfig()
        self.seed = int(seed)
        cfg = self.config

        def init_rng(component):
            return lambda layer: substream(self.seed, "init", component, layer)

        self.backbone = Backbone(init_rng("backbone"), 3, cfg.stem_channels,
                                 cfg.block_channels)
        self.laterals = Laterals(init_rng("fpn"), cfg.block_channels, cfg.fpn_channels)
        anchors_per_cell = [len(sizes) * len(cfg.anchor_ratios) for sizes in cfg.level_sizes]
        self.rpn = RPNHead(init_rng("rpn"), cfg.fpn_channels, anchors_per_cell)
        self.anchor_grids = build_level_anchors(cfg.image_size, cfg.level_sizes,
                                                cfg.anchor_ratios)
        self.anchor_boxes = np.concatenate([g.anchors for g in self.anchor_grids], axis=0)
        self.heads: dict = {}
        self.domains: dict = {}
        self.meta: dict = {}

    # ------------------------------------------------------------------ setup

    def register_domain(self, name: str, category_ids) -> DomainInfo:
        """Add a domain-specific head; existing parameters are untouched."""
        if name in self.domains:
            raise ValueError(f"domain '{name}' is already registered")
        info = DomainInfo(index=len(self.domains), name=name,
                          category_ids=tuple(int(c) for c in category_ids))
        cfg = self.config
        in_features = cfg.fpn_channels * cfg.pool_size * cfg.pool_size
        rng_for = lambda layer: substream(self.seed, "init", f"head.{name}", layer)
        self.heads[name] = RoiHead(rng_for, name, in_features, cfg.head_hidden,
                                   info.num_classes)
        self.domains[name] = info
        return info

    def _domain(self, name: str) -> DomainInfo:
        if name not in self.domains:
            raise KeyError(
                f"domain '{name}' is not registered; available: {sorted(self.domains)}")
        return self.domains[name]

    def component_params(self):
        out = {
            "backbone": self.backbone.param_paths(),
            "fpn": self.laterals.param_paths(),
            "rpn": self.rpn.param_paths(),
        }
        for name, head in self.heads.items():
            out[f"head.{name}"] = head.param_paths()
        return out

    def component_no_decay(self):
        out = {
            "backbone": self.backbone.no_decay_paths(),
            "fpn": self.laterals.no_decay_paths(),
            "rpn": self.rpn.no_decay_paths(),
        }
        for name, head in self.heads.items():
            out[f"head.{name}"] = head.no_decay_paths()
        return out

    def all_params(self):
        merged = {}
        for params in self.component_params().values():
            merged.update(params)
        return merged

    # ---------------------------------------------------------------- forward

    def _as_batch(self, image: np.ndarray) -> np.ndarray:
        """Accept (H, W, 3) or (3, H, W) single images."""
        if image.ndim != 3:
            raise ValueError(f"expected one image, got shape {image.shape}")
        if image.shape[2] == 3:
            image = image.transpose(2, 0, 1)
        elif image.shape[0] != 3:
            raise ValueError(f"cannot interpret image shape {image.shape}")
        size = self.config.image_size
        if image.shape[1] != size or image.shape[2] != size:
            raise ValueError(
                f"expected {size}x{size} images, got {image.shape[1]}x{image.shape[2]}")
        return image[None].astype(np.float64)

    def extract_features(self, images: np.ndarray):
        """(N, 3, H, W) batch -> (pyramid levels, caches)."""
        taps, bb_cache = self.backbone.forward(images)
        pyramid, lat_cache = self.laterals.forward(taps)
        return pyramid, (bb_cache, lat_cache)

    def rpn_forward(self, pyramid):
        """Pyramid -> (per-image proposals, flat objectness, flat deltas, cache)."""
        cfg = self.config
        obj, deltas, rpn_cache = self.rpn.forward(pyramid)
        proposals = []
        for i in range(obj.shape[0]):
            boxes, scores = proposals_from_outputs(
                obj[i], deltas[i], self.anchor_boxes, cfg.image_size,
                cfg.rpn_pre_nms_topk, cfg.rpn_post_nms_topk,
                cfg.rpn_nms_threshold, cfg.delta_clamp)
            proposals.append((boxes, scores))
        return proposals, obj, deltas, rpn_cache

    # ------------------------------------------------------------- roi pooling

    def roi_level(self, box: np.ndarray) -> int:
        w = max(float(box[2] - box[0]), 0.0)
        h = max(float(box[3] - box[1]), 0.0)
        area = w * h
        if area <= 0.0:
            return 0
        k = int(np.floor(2 + np.log2(np.sqrt(area) / self.config.canonical_box_size)))
        return min(max(k, 0), 3)

    def roi_pool(self, pyramid_image, boxes: np.ndarray):
        """Max-pool each box into a (C, pool, pool) grid from its level.

        ``pyramid_image`` holds one image's level features (C, H_l, W_l).
        Returns (pooled, cache); degenerate boxes pool to zeros and are
        flagged in the cache.
        """
        cfg = self.config
        pool = cfg.pool_size
        channels = cfg.fpn_channels
        n_boxes = boxes.shape[0]
        pooled = np.zeros((n_boxes, channels, pool, pool))
        entries = []
        for b in range(n_boxes):
            level = self.roi_level(boxes[b])
            feat = pyramid_image[level]
            _, fh, fw = feat.shape
            stride = PYRAMID_STRIDES[level]
            x0 = min(max(boxes[b, 0] / stride, 0.0), fw)
            x1 = min(max(boxes[b, 2] / stride, 0.0), fw)
            y0 = min(max(boxes[b, 1] / stride, 0.0), fh)
            y1 = min(max(boxes[b, 3] / stride, 0.0), fh)
            if x1 <= x0 or y1 <= y0:
                entries.append(None)  # degenerate: stays zero
                continue
            positions = np.empty((pool, pool, channels), dtype=np.int64)
            for bi in range(pool):
                ys = int(np.floor(y0 + bi * (y1 - y0) / pool))
                ye = int(np.ceil(y0 + (bi + 1) * (y1 - y0) / pool))
                ys = min(max(ys, 0), fh - 1)
                ye = min(max(ye, ys + 1), fh)
                for bj in range(pool):
                    xs = int(np.floor(x0 + bj * (x1 - x0) / pool))
                    xe = int(np.ceil(x0 + (bj + 1) * (x1 - x0) / pool))
                    xs = min(max(xs, 0), fw - 1)
                    xe = min(max(xe, xs + 1), fw)
                    sub = feat[:, ys:ye, xs:xe].reshape(channels, -1)
                    arg = np.argmax(sub, axis=1)
                    pooled[b, :, bi, bj] = sub[np.arange(channels), arg]
                    sub_w = xe - xs
                    positions[bi, bj] = (ys + arg // sub_w) * fw + (xs + arg % sub_w)
            entries.append((level, positions))
        return pooled, entries

    def roi_pool_backward(self, entries, grad_pooled, level_shapes):
        """Scatter pooled-feature gradients back onto per-level maps."""
        channels = self.config.fpn_channels
        grads = [np.zeros((channels, h, w)) for (h, w) in level_shapes]
        chan = np.arange(channels)
        for b, entry in enumerate(entries):
            if entry is None:
                continue
            level, positions = entry
            flat = grads[level].reshape(channels, -1)
            for bi in range(positions.shape[0]):
                for bj in range(positions.shape[1]):
                    np.add.at(flat, (chan, positions[bi, bj]), grad_pooled[b, :, bi, bj])
        return grads

    def head_forward(self, domain: str, pooled: np.ndarray):
        """Route pooled features through the domain's head only."""
        self._domain(domain)
        flat = pooled.reshape(pooled.shape[0], -1)
        logits, reg, cache = self.heads[domain].forward(flat)
        return logits, reg, cache

    # -------------------------------------------------------------- inference

    def detect(self, image: np.ndarray, domain: str,
               score_threshold: float | None = None,
               nms_threshold: float | None = None):
        """Full pipeline on one (H, W, 3) image for one domain."""
        info = self._domain(domain)
        cfg = self.config
        score_thr = cfg.score_threshold if score_threshold is None else score_threshold
        nms_thr = cfg.nms_threshold if nms_threshold is None else nms_threshold

        batch = self._as_batch(np.asarray(image, dtype=np.float64))
        pyramid, _ = self.extract_features(batch)
        proposals, _, _, _ = self.rpn_forward(pyramid)
        boxes, _ = proposals[0]
        # degenerate proposals (clipped to a line) cannot be regressed
        if boxes.shape[0]:
            boxes = boxes[(boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])]
        if boxes.shape[0] == 0:
            return []
        pyramid_image = [level[0] for level in pyramid]
        pooled, _ = self.roi_pool(pyramid_image, boxes)
        logits, reg, _ = self.head_forward(domain, pooled)

        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)

        candidates = []
        for cls in range(1, info.num_classes + 1):
            scores = probs[:, cls]
            decoded = geometry.decode(boxes, reg[:, cls - 1, :], clamp=cfg.delta_clamp)
            decoded = geometry.clip_boxes(decoded, cfg.image_size, cfg.image_size)
            keep = geometry.nms(decoded, scores, nms_thr)
            for idx in keep:
                if scores[idx] > score_thr:
                    candidates.append((float(scores[idx]), cls, int(idx), decoded[idx]))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        out = []
        for score, cls, _, box in candidates[:cfg.max_detections]:
            out.append(Detection(box=box, class_id=cls,
                                 category_id=info.category_ids[cls - 1],
                                 score=score, domain=domain))
        return out

    # ----------------------------------------------------------------- losses

    def build_plan(self, proposals, gt_boxes_list, gt_labels_list, rng) -> LossPlan:
        """Freeze per-image training targets for the current batch.

        ``gt_labels_list`` holds domain-local class ids in 1..K.  During
        training the ground-truth boxes are appended to the proposals so
        the head sees positives before the RPN warms up.
        """
        cfg = self.config
        plan = LossPlan()
        for (prop_boxes, _), gts, labels in zip(proposals, gt_boxes_list, gt_labels_list):
            gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
            labels = np.asarray(labels, dtype=np.int64)

            anchor_labels, _, anchor_deltas = assign_rpn_targets(
                self.anchor_boxes, gts, cfg.rpn_pos_iou, cfg.rpn_neg_iou)
            pos, neg = sample_targets(anchor_labels, rng, cfg.rpn_sample_pos,
                                      cfg.rpn_sample_neg)
            sample = np.concatenate([pos, neg])
            plan.rpn_sample_idx.append(sample)
            plan.rpn_sample_labels.append(
                np.concatenate([np.ones(pos.size), np.zeros(neg.size)]))
            plan.rpn_pos_idx.append(pos)
            plan.rpn_pos_deltas.append(anchor_deltas[pos])

            boxes = np.concatenate([prop_boxes, gts], axis=0) if gts.size else prop_boxes
            roi_labels = np.zeros(boxes.shape[0], dtype=np.int64)
            roi_deltas = np.zeros((boxes.shape[0], 4))
            if gts.shape[0]:
                iou = geometry.pairwise_iou(boxes, gts)
                best = iou.argmax(axis=1)
                best_iou = iou[np.arange(boxes.shape[0]), best]
                matched = best_iou >= cfg.roi_pos_iou
                roi_labels[matched] = labels[best[matched]]
                if np.any(matched):
                    roi_deltas[matched] = geometry.encode(boxes[matched], gts[best[matched]])
            marker = np.where(roi_labels > 0, 1, 0)
            pos_rows, neg_rows = sample_targets(marker, rng, cfg.roi_sample_pos,
                                                cfg.roi_sample_neg)
            rows = np.concatenate([pos_rows, neg_rows])
            plan.roi_boxes.append(boxes[rows])
            plan.roi_labels.append(roi_labels[rows])
            plan.roi_pos_rows.append(np.arange(pos_rows.size))
            plan.roi_pos_deltas.append(roi_deltas[pos_rows])
        return plan

    def loss_with_plan(self, images: np.ndarray, plan: LossPlan, domain: str,
                       active_components=None, need_grads: bool = True,
                       forward_state=None):
        """Detection loss (and gradients) for frozen targets.

        ``active_components`` limits which components receive parameter
        gradients and how deep backpropagation descends; None means all.
        """
        info = self._domain(domain)
        cfg = self.config
        head_key = f"head.{domain}"
        if active_components is None:
            active_components = {"backbone", "fpn", "rpn", head_key}
        active = set(active_components)

        if forward_state is None:
            pyramid, feat_cache = self.extract_features(images)
            obj, deltas, rpn_cache = self.rpn.forward(pyramid)
        else:
            pyramid, feat_cache, obj, deltas, rpn_cache = forward_state
        bb_cache, lat_cache = feat_cache
        n_images = images.shape[0]

        # --- RPN losses on sampled anchors, pooled across the batch
        z_parts = [obj[i, plan.rpn_sample_idx[i]] for i in range(n_images)]
        y_parts = [plan.rpn_sample_labels[i] for i in range(n_images)]
        z = np.concatenate(z_parts) if z_parts else np.zeros(0)
        y = np.concatenate(y_parts) if y_parts else np.zeros(0)
        l_rpn_cls, g_z = binary_cross_entropy_with_logits(z, y)

        d_parts = [deltas[i, plan.rpn_pos_idx[i]] for i in range(n_images)]
        t_parts = [plan.rpn_pos_deltas[i] for i in range(n_images)]
        d_pred = np.concatenate(d_parts, axis=0) if d_parts else np.zeros((0, 4))
        d_true = np.concatenate(t_parts, axis=0) if t_parts else np.zeros((0, 4))
        l_rpn_reg, g_d = smooth_l1(d_pred, d_true, cfg.smooth_l1_beta)

        # --- ROI head losses on sampled proposals
        pooled_parts, pool_entries = [], []
        for i in range(n_images):
            pyramid_image = [level[i] for level in pyramid]
            pooled, entries = self.roi_pool(pyramid_image, plan.roi_boxes[i])
            pooled_parts.append(pooled)
            pool_entries.append(entries)
        pooled_all = np.concatenate(pooled_parts, axis=0)
        roi_labels = np.concatenate(plan.roi_labels)
        logits, reg, head_cache = self.head_forward(domain, pooled_all)
        l_head_cls, g_logits = softmax_cross_entropy(logits, roi_labels)

        row_offsets = np.cumsum([0] + [b.shape[0] for b in plan.roi_boxes])
        pos_rows = np.concatenate([
            plan.roi_pos_rows[i] + row_offsets[i] for i in range(n_images)
        ]).astype(np.int64)
        pos_targets = np.concatenate(plan.roi_pos_deltas, axis=0) \
            if plan.roi_pos_deltas else np.zeros((0, 4))
        pos_classes = roi_labels[pos_rows]
        reg_pred = reg[pos_rows, pos_classes - 1, :] if pos_rows.size \
            else np.zeros((0, 4))
        l_head_reg, g_reg_rows = smooth_l1(reg_pred, pos_targets, cfg.smooth_l1_beta)

        l_cls = l_rpn_cls + l_head_cls
        l_reg = l_rpn_reg + l_head_reg
        loss = DetectionLoss(l_cls=l_cls, l_reg=l_reg, l_det=l_cls + l_reg)
        if not need_grads:
            return loss, {}

        # --- backward
        grads: dict = {}
        need_pyramid = bool({"fpn", "backbone"} & active)
        need_backbone = "backbone" in active

        g_pooled = None
        if head_key in active or need_pyramid:
            d_logits = g_logits
            d_reg = np.zeros_like(reg)
            if pos_rows.size:
                d_reg[pos_rows, pos_classes - 1, :] = g_reg_rows
            head_grads, g_flat = self.heads[domain].backward(
                head_cache, d_logits, d_reg, need_input_grad=need_pyramid)
            if head_key in active:
                grads.update(head_grads)
            if need_pyramid:
                g_pooled = g_flat.reshape(pooled_all.shape)

        if "rpn" in active or need_pyramid:
            d_obj = np.zeros_like(obj)
            d_deltas = np.zeros_like(deltas)
            z_offsets = np.cumsum([0] + [s.size for s in plan.rpn_sample_idx])
            d_offsets = np.cumsum([0] + [p.size for p in plan.rpn_pos_idx])
            for i in range(n_images):
                d_obj[i, plan.rpn_sample_idx[i]] = g_z[z_offsets[i]:z_offsets[i + 1]]
                if plan.rpn_pos_idx[i].size:
                    d_deltas[i, plan.rpn_pos_idx[i]] = g_d[d_offsets[i]:d_offsets[i + 1]]
            rpn_grads, g_pyr_rpn = self.rpn.backward(
                rpn_cache, d_obj, d_deltas,
                need_input_grad=need_pyramid, need_param_grads="rpn" in active)
            grads.update(rpn_grads)
        else:
            g_pyr_rpn = [None] * len(pyramid)

        if need_pyramid:
            level_shapes = [(level.shape[2], level.shape[3]) for level in pyramid]
            g_pyramid = [
                np.zeros_like(level) if g is None else g.copy()
                for level, g in zip(pyramid, g_pyr_rpn)
            ]
            row_cursor = 0
            for i in range(n_images):
                count = plan.roi_boxes[i].shape[0]
                g_levels = self.roi_pool_backward(
                    pool_entries[i], g_pooled[row_cursor:row_cursor + count], level_shapes)
                for level in range(len(pyramid)):
                    g_pyramid[level][i] += g_levels[level]
                row_cursor += count
            lat_grads, g_taps = self.laterals.backward(lat_cache, g_pyramid,
                                                       need_input_grad=need_backbone)
            if "fpn" in active:
                grads.update(lat_grads)
            if need_backbone:
                grads.update(self.backbone.backward(bb_cache, g_taps))
        return loss, grads

    def training_step_loss(self, images: np.ndarray, gt_boxes_list, gt_labels_list,
                           domain: str, rng, active_components=None):
        """One batch: forward, build targets, compute loss and gradients."""
        pyramid, feat_cache = self.extract_features(images)
        obj, deltas, rpn_cache = self.rpn.forward(pyramid)
        cfg = self.config
        proposals = []
        for i in range(images.shape[0]):
            boxes, scores = proposals_from_outputs(
                obj[i], deltas[i], self.anchor_boxes, cfg.image_size,
                cfg.rpn_pre_nms_topk, cfg.rpn_post_nms_topk,
                cfg.rpn_nms_threshold, cfg.delta_clamp)
            proposals.append((boxes, scores))
        plan = self.build_plan(proposals, gt_boxes_list, gt_labels_list, rng)
        loss, grads = self.loss_with_plan(
            images, plan, domain, active_components,
            forward_state=(pyramid, feat_cache, obj, deltas, rpn_cache))
        return loss, grads, plan

    # ------------------------------------------------------------ persistence

    def save(self, base_path, extra_meta: dict | None = None) -> None:
        arch = {
            "config": asdict(self.config),
            "domains": [
                {"name": d.name, "category_ids": list(d.category_ids)}
                for d in sorted(self.domains.values(), key=lambda d: d.index)
            ],
        }
        meta = {"seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(base_path, self.all_params(), arch, meta)

    @classmethod
    def load(cls, base_path) -> "Detector":
        params, arch, meta = load_checkpoint(base_path)
        raw = dict(arch["config"])
        raw["block_channels"] = tuple(raw["block_channels"])
        raw["level_sizes"] = tuple(tuple(level) for level in raw["level_sizes"])
        raw["anchor_ratios"] = tuple(raw["anchor_ratios"])
        config = DetectorConfig(**raw)
        det = cls(config=config, seed=int(meta["seed"]))
        for dom in arch["domains"]:
            det.register_domain(dom["name"], dom["category_ids"])
        own = det.all_params()
        if set(own) != set(params):
            missing = sorted(set(own) ^ set(params))
            raise ValueError(f"checkpoint parameters do not match architecture: {missing}")
        for name, arr in params.items():
            np.copyto(own[name], arr)
        det.meta = meta
        return det
