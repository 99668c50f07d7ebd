"""Axis-aligned box arithmetic: IoU, anchor grids, delta coding and NMS.

Boxes are float64 numpy arrays ``[x_min, y_min, x_max, y_max]`` in pixel
coordinates.  Every function here is a pure function over immutable
inputs; nothing keeps state, so all of it is thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Decoded widths/heights grow like exp(dw); ln(16) caps the blow-up at 16x.
DEFAULT_DELTA_CLAMP = float(np.log(16.0))


def as_boxes(boxes) -> np.ndarray:
    """Coerce input to a float64 (N, 4) array. Accepts a single (4,) box."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"expected boxes of shape (N, 4), got {arr.shape}")
    return arr


def validate_boxes(boxes) -> np.ndarray:
    """Validate finiteness and corner ordering, returning the (N, 4) array."""
    arr = as_boxes(boxes)
    if not np.all(np.isfinite(arr)):
        raise ValueError("boxes contain non-finite coordinates")
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise ValueError("boxes must satisfy x_max >= x_min and y_max >= y_min")
    return arr


def box_area(boxes) -> np.ndarray:
    arr = as_boxes(boxes)
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def iou(a, b) -> float:
    """IoU of two single boxes. Degenerate pairs (union 0) give 0.0."""
    m = pairwise_iou(as_boxes(a), as_boxes(b))
    return float(m[0, 0])


def pairwise_iou(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU matrix of shape (N, M)."""
    a = validate_boxes(boxes_a)
    b = validate_boxes(boxes_b)
    area_a = box_area(a)
    area_b = box_area(b)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
    return out


@dataclass(frozen=True)
class AnchorGrid:
    """Anchors tiled over one feature map.

    ``anchors`` is flat (N, 4), ordered row-major by cell, then by size,
    then by ratio; N = h_feat * w_feat * len(sizes) * len(ratios).
    """

    stride: int
    sizes: tuple
    ratios: tuple
    h_feat: int
    w_feat: int
    anchors: np.ndarray

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def anchors_per_cell(self) -> int:
        return len(self.sizes) * len(self.ratios)


def generate_anchors(h_feat: int, w_feat: int, stride: float, sizes, ratios) -> AnchorGrid:
    """Tile anchors over an h_feat x w_feat grid.

    The anchor for cell (i, j), size s and ratio r is centered at
    ((j + 0.5) * stride, (i + 0.5) * stride) with width s / sqrt(r) and
    height s * sqrt(r), so r is the height/width aspect ratio and the
    area stays s^2.
    """
    sizes = tuple(float(s) for s in sizes)
    ratios = tuple(float(r) for r in ratios)
    if h_feat < 1 or w_feat < 1:
        raise ValueError("feature grid must be at least 1x1")
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if not sizes or any(s <= 0 for s in sizes):
        raise ValueError(f"sizes must be non-empty and positive, got {sizes}")
    if not ratios or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be non-empty and positive, got {ratios}")

    ws = np.array([s / np.sqrt(r) for s in sizes for r in ratios])
    hs = np.array([s * np.sqrt(r) for s in sizes for r in ratios])
    base = np.stack([-ws / 2.0, -hs / 2.0, ws / 2.0, hs / 2.0], axis=1)

    jj, ii = np.meshgrid(np.arange(w_feat), np.arange(h_feat))
    cx = (jj.ravel() + 0.5) * stride
    cy = (ii.ravel() + 0.5) * stride
    centers = np.stack([cx, cy, cx, cy], axis=1)

    anchors = (centers[:, None, :] + base[None, :, :]).reshape(-1, 4)
    return AnchorGrid(
        stride=stride,
        sizes=sizes,
        ratios=ratios,
        h_feat=int(h_feat),
        w_feat=int(w_feat),
        anchors=anchors,
    )


def _centers(boxes: np.ndarray):
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    cx = boxes[:, 0] + 0.5 * w
    cy = boxes[:, 1] + 0.5 * h
    return cx, cy, w, h


def encode(anchors, targets) -> np.ndarray:
    """Encode target boxes as (dx, dy, dw, dh) deltas relative to anchors.

    dx = (cx_t - cx_a) / w_a, dw = ln(w_t / w_a), and likewise for y/h.
    """
    a = validate_boxes(anchors)
    t = validate_boxes(targets)
    if a.shape != t.shape:
        raise ValueError(f"anchor/target shape mismatch: {a.shape} vs {t.shape}")
    acx, acy, aw, ah = _centers(a)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchors must have positive width and height")
    tcx, tcy, tw, th = _centers(t)
    if np.any(tw <= 0) or np.any(th <= 0):
        raise ValueError("targets must have positive width and height")
    dx = (tcx - acx) / aw
    dy = (tcy - acy) / ah
    dw = np.log(tw / aw)
    dh = np.log(th / ah)
    out = np.stack([dx, dy, dw, dh], axis=1)
    if np.asarray(anchors).ndim == 1 and np.asarray(targets).ndim == 1:
        return out[0]
    return out


def decode(anchors, deltas, clamp: float = DEFAULT_DELTA_CLAMP) -> np.ndarray:
    """Invert :func:`encode`. dw/dh are clamped at ``clamp`` before exp."""
    a = validate_boxes(anchors)
    d = np.asarray(deltas, dtype=np.float64)
    single = d.ndim == 1
    if single:
        d = d[None, :]
    if d.shape != a.shape:
        raise ValueError(f"anchor/delta shape mismatch: {a.shape} vs {d.shape}")
    acx, acy, aw, ah = _centers(a)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("anchors must have positive width and height")
    dw = np.minimum(d[:, 2], clamp)
    dh = np.minimum(d[:, 3], clamp)
    cx = d[:, 0] * aw + acx
    cy = d[:, 1] * ah + acy
    w = np.exp(dw) * aw
    h = np.exp(dh) * ah
    out = np.stack([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0], axis=1)
    return out[0] if single else out


def clip_boxes(boxes, width: float, height: float) -> np.ndarray:
    """Clip boxes to [0, width] x [0, height]."""
    arr = as_boxes(boxes).copy()
    arr[:, 0::2] = np.clip(arr[:, 0::2], 0.0, float(width))
    arr[:, 1::2] = np.clip(arr[:, 1::2], 0.0, float(height))
    return arr


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring box and removes every remaining
    box whose IoU with it exceeds ``iou_threshold``.  Returns kept
    indices in descending score order; score ties go to the lower
    original index.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold}")
    scores = np.asarray(scores, dtype=np.float64)
    arr = as_boxes(boxes) if scores.size else np.zeros((0, 4))
    if arr.shape[0] != scores.shape[0]:
        raise ValueError(f"{arr.shape[0]} boxes vs {scores.shape[0]} scores")
    if arr.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    validate_boxes(arr)

    x1, y1, x2, y2 = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    order = np.argsort(-scores, kind="stable")
    kept = []
    while order.size:
        i = order[0]
        kept.append(int(i))
        rest = order[1:]
        if rest.size == 0:
            break
        iw = np.clip(np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]), 0.0, None)
        ih = np.clip(np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]), 0.0, None)
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        overlaps = np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)
        order = rest[overlaps <= iou_threshold]
    return np.asarray(kept, dtype=np.int64)


def xywh_to_xyxy(boxes) -> np.ndarray:
    """Convert (x, y, w, h) annotation boxes to corner form."""
    arr = np.asarray(boxes, dtype=np.float64)
    single = arr.ndim == 1
    arr = as_boxes(arr)
    out = arr.copy()
    out[:, 2] = arr[:, 0] + arr[:, 2]
    out[:, 3] = arr[:, 1] + arr[:, 3]
    return out[0] if single else out


def xyxy_to_xywh(boxes) -> np.ndarray:
    """Convert corner-form boxes to (x, y, w, h)."""
    arr = np.asarray(boxes, dtype=np.float64)
    single = arr.ndim == 1
    arr = as_boxes(arr)
    out = arr.copy()
    out[:, 2] = arr[:, 2] - arr[:, 0]
    out[:, 3] = arr[:, 3] - arr[:, 1]
    return out[0] if single else out
