"""Region proposal network: anchor scoring, decoding and target matching.

One 3x3 conv is shared across pyramid levels; per-level 1x1 convs emit
objectness logits and box deltas (levels carry different anchor counts
per cell, so the output convs cannot be shared).  Anchor bookkeeping is
flat: all levels concatenated, cell-major within each level.
"""

from __future__ import annotations

import numpy as np

from . import geometry
from .backbone import PYRAMID_STRIDES
from .layers import Conv2d, ReLU


def build_level_anchors(image_size: int, level_sizes, ratios):
    """Anchor grids for each pyramid level of a square image."""
    grids = []
    for stride, sizes in zip(PYRAMID_STRIDES, level_sizes):
        cells = image_size // stride
        grids.append(geometry.generate_anchors(cells, cells, stride, sizes, ratios))
    return grids


def assign_rpn_targets(anchor_boxes: np.ndarray, gt_boxes: np.ndarray,
                       pos_iou: float = 0.7, neg_iou: float = 0.3):
    """Label anchors positive/negative/ignore against ground-truth boxes.

    Positive: IoU >= pos_iou with some GT, or being the (lowest-index)
    argmax-IoU anchor of a GT.  Negative: best IoU < neg_iou.  Everything
    else is ignored.  Returns (labels, matched_gt, deltas) where labels
    are +1/0/-1, matched_gt holds the best GT index per anchor, and
    deltas are regression targets for the positive anchors (zeros
    elsewhere).

    With no ground truth every anchor is negative.
    """
    n_anchors = anchor_boxes.shape[0]
    labels = np.full(n_anchors, -1, dtype=np.int8)
    matched = np.zeros(n_anchors, dtype=np.int64)
    deltas = np.zeros((n_anchors, 4))
    if gt_boxes.shape[0] == 0:
        labels[:] = 0
        return labels, matched, deltas

    iou = geometry.pairwise_iou(anchor_boxes, gt_boxes)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n_anchors), best_gt]

    labels[best_iou < neg_iou] = 0
    labels[best_iou >= pos_iou] = 1
    # every GT claims its single best anchor, even below the threshold
    per_gt_best = iou.argmax(axis=0)
    per_gt_iou = iou[per_gt_best, np.arange(gt_boxes.shape[0])]
    force = per_gt_best[per_gt_iou > 0.0]
    labels[force] = 1

    matched[:] = best_gt
    pos = labels == 1
    if np.any(pos):
        deltas[pos] = geometry.encode(anchor_boxes[pos], gt_boxes[matched[pos]])
    return labels, matched, deltas


def sample_targets(labels: np.ndarray, rng: np.random.Generator,
                   max_pos: int, max_neg: int):
    """Pick at most max_pos positive and max_neg negative indices."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size > max_pos:
        pos = np.sort(pos[rng.permutation(pos.size)[:max_pos]])
    if neg.size > max_neg:
        neg = np.sort(neg[rng.permutation(neg.size)[:max_neg]])
    return pos, neg


class RPNHead:
    """Shared trunk conv plus per-level objectness/delta convs."""

    def __init__(self, rng_for, in_channels: int, anchors_per_cell):
        self.anchors_per_cell = tuple(anchors_per_cell)
        self.conv = Conv2d("conv", in_channels, in_channels, 3, 1, rng_for("conv"))
        self.relu = ReLU()
        self.obj_convs = []
        self.delta_convs = []
        for level, a in enumerate(self.anchors_per_cell):
            self.obj_convs.append(
                Conv2d(f"obj{level}", in_channels, a, 1, 0, rng_for(f"obj{level}")))
            self.delta_convs.append(
                Conv2d(f"delta{level}", in_channels, 4 * a, 1, 0, rng_for(f"delta{level}")))

    def forward(self, pyramid):
        """Returns flat (N, A_total) objectness logits, (N, A_total, 4) deltas."""
        n = pyramid[0].shape[0]
        obj_parts, delta_parts, caches = [], [], []
        for level, feat in enumerate(pyramid):
            a = self.anchors_per_cell[level]
            h, w = feat.shape[2], feat.shape[3]
            t, c_conv = self.conv.forward(feat)
            t, c_relu = self.relu.forward(t)
            obj, c_obj = self.obj_convs[level].forward(t)
            delta, c_delta = self.delta_convs[level].forward(t)
            # (N, A, H, W) -> cell-major flat (N, H*W*A)
            obj_parts.append(obj.transpose(0, 2, 3, 1).reshape(n, h * w * a))
            # (N, 4A, H, W) -> (N, H*W*A, 4); channel layout is a*4 + k
            delta_parts.append(
                delta.reshape(n, a, 4, h, w).transpose(0, 3, 4, 1, 2).reshape(n, h * w * a, 4))
            caches.append((c_conv, c_relu, c_obj, c_delta, (h, w, a)))
        return np.concatenate(obj_parts, axis=1), np.concatenate(delta_parts, axis=1), caches

    def backward(self, caches, grad_obj_flat, grad_delta_flat,
                 need_input_grad: bool, need_param_grads: bool):
        """Backprop flat gradients; returns (param grads, per-level input grads)."""
        n = grad_obj_flat.shape[0]
        grads: dict = {}
        grad_pyramid = []
        offset = 0
        for level, cache in enumerate(caches):
            c_conv, c_relu, c_obj, c_delta, (h, w, a) = cache
            count = h * w * a
            g_obj = grad_obj_flat[:, offset:offset + count]
            g_delta = grad_delta_flat[:, offset:offset + count]
            offset += count
            g_obj = g_obj.reshape(n, h, w, a).transpose(0, 3, 1, 2)
            g_delta = (g_delta.reshape(n, h, w, a, 4)
                       .transpose(0, 3, 4, 1, 2).reshape(n, 4 * a, h, w))
            g_t_obj, obj_grads = self.obj_convs[level].backward(c_obj, g_obj)
            g_t_delta, delta_grads = self.delta_convs[level].backward(c_delta, g_delta)
            g_t, _ = self.relu.backward(c_relu, g_t_obj + g_t_delta)
            g_feat, conv_grads = self.conv.backward(c_conv, g_t)
            if need_param_grads:
                for pname, arr in obj_grads.items():
                    grads[f"rpn/obj{level}/{pname}"] = arr
                for pname, arr in delta_grads.items():
                    grads[f"rpn/delta{level}/{pname}"] = arr
                for pname, arr in conv_grads.items():
                    key = f"rpn/conv/{pname}"
                    grads[key] = grads[key] + arr if key in grads else arr
            grad_pyramid.append(g_feat if need_input_grad else None)
        return grads, grad_pyramid

    def param_paths(self):
        out = {}
        for pname, arr in self.conv.params.items():
            out[f"rpn/conv/{pname}"] = arr
        for conv in self.obj_convs + self.delta_convs:
            for pname, arr in conv.params.items():
                out[f"rpn/{conv.name}/{pname}"] = arr
        return out

    def no_decay_paths(self):
        paths = {f"rpn/conv/{p}" for p in self.conv.no_decay}
        for conv in self.obj_convs + self.delta_convs:
            paths |= {f"rpn/{conv.name}/{p}" for p in conv.no_decay}
        return paths


def proposals_from_outputs(obj_logits: np.ndarray, deltas: np.ndarray,
                           anchor_boxes: np.ndarray, image_size: int,
                           pre_nms_topk: int, post_nms_topk: int,
                           nms_threshold: float, delta_clamp: float):
    """Turn one image's raw RPN outputs into scored proposals.

    sigmoid -> decode against anchors -> clip to the image -> keep the
    top-K by score -> NMS -> top-N.  Returns (boxes, scores).
    """
    scores = 1.0 / (1.0 + np.exp(-obj_logits))
    order = np.argsort(-scores, kind="stable")[:pre_nms_topk]
    boxes = geometry.decode(anchor_boxes[order], deltas[order], clamp=delta_clamp)
    boxes = geometry.clip_boxes(boxes, image_size, image_size)
    keep = geometry.nms(boxes, scores[order], nms_threshold)[:post_nms_topk]
    return boxes[keep], scores[order][keep]
