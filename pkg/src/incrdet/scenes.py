"""Deterministic synthetic two-domain scene generator.

Domain S imitates structured scenes: a handful of well-separated shapes
on a smooth background.  Domain T imitates unstructured scenes: more
objects from a disjoint class set, overlapping and truncated instances,
small objects and a textured background.  Shapes are rasterized by
testing pixel centers against analytic predicates, so identical seeds
produce identical pixels on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream_seed

S_CLASSES = (("box", 1), ("disc", 2), ("triangle", 3), ("bar", 4))
T_CLASSES = (("cross", 5), ("ring", 6), ("diamond", 7), ("wedge", 8),
             ("blob", 9), ("stripe", 10))

DOMAIN_CLASSES = {"S": S_CLASSES, "T": T_CLASSES}

_BASE_COLORS = {
    "box": (0.82, 0.20, 0.18), "disc": (0.18, 0.32, 0.85),
    "triangle": (0.16, 0.66, 0.28), "bar": (0.88, 0.78, 0.15),
    "cross": (0.80, 0.18, 0.72), "ring": (0.12, 0.72, 0.78),
    "diamond": (0.92, 0.52, 0.12), "wedge": (0.52, 0.22, 0.78),
    "blob": (0.55, 0.62, 0.16), "stripe": (0.20, 0.55, 0.50),
}


@dataclass(frozen=True)
class SceneSpec:
    """Generation knobs for one domain."""

    domain: str
    image_size: int = 128
    object_count_range: tuple = (1, 4)
    occlusion_probability: float = 0.0
    background_texture_level: float = 0.0
    size_range: tuple = (22.0, 54.0)

    def __post_init__(self):
        if self.domain not in DOMAIN_CLASSES:
            raise ValueError(f"unknown domain '{self.domain}'; valid: S, T")
        if self.image_size % 32 != 0:
            raise ValueError(f"image_size must be a multiple of 32, got {self.image_size}")
        lo, hi = self.object_count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad object_count_range {self.object_count_range}")


def default_spec(domain: str, image_size: int = 128) -> SceneSpec:
    if domain == "S":
        return SceneSpec(domain="S", image_size=image_size,
                         object_count_range=(1, 4), occlusion_probability=0.0,
                         background_texture_level=0.0, size_range=(22.0, 54.0))
    if domain == "T":
        return SceneSpec(domain="T", image_size=image_size,
                         object_count_range=(3, 8), occlusion_probability=0.35,
                         background_texture_level=1.0, size_range=(9.0, 36.0))
    raise ValueError(f"unknown domain '{domain}'; valid: S, T")


def _pixel_grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size]
    return xs + 0.5, ys + 0.5


def _polygon_mask(xs, ys, vertices) -> np.ndarray:
    """Mask of a convex polygon given counter-clockwise vertices."""
    mask = np.ones_like(xs, dtype=bool)
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        mask &= (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0) >= 0.0
    return mask


def shape_mask(name: str, params: dict, image_size: int) -> np.ndarray:
    """Rasterize one shape to a boolean mask over the image grid."""
    xs, ys = _pixel_grid(image_size)
    cx, cy, s = params["cx"], params["cy"], params["size"]
    half = s / 2.0
    if name == "box":
        hw, hh = half * params["aspect"], half / params["aspect"]
        return (np.abs(xs - cx) <= hw) & (np.abs(ys - cy) <= hh)
    if name == "disc":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= half ** 2
    if name == "triangle":
        verts = [(cx, cy - half), (cx - half, cy + half), (cx + half, cy + half)]
        return _polygon_mask(xs, ys, verts)
    if name == "bar":
        hw, hh = half, half * 0.3
        if params["vertical"]:
            hw, hh = hh, hw
        return (np.abs(xs - cx) <= hw) & (np.abs(ys - cy) <= hh)
    if name == "cross":
        arm = half * 0.34
        horiz = (np.abs(xs - cx) <= half) & (np.abs(ys - cy) <= arm)
        vert = (np.abs(xs - cx) <= arm) & (np.abs(ys - cy) <= half)
        return horiz | vert
    if name == "ring":
        r2 = (xs - cx) ** 2 + (ys - cy) ** 2
        return (r2 <= half ** 2) & (r2 >= (half * 0.55) ** 2)
    if name == "diamond":
        return np.abs(xs - cx) / half + np.abs(ys - cy) / half <= 1.0
    if name == "wedge":
        verts = [(cx - half, cy - half), (cx - half, cy + half), (cx + half, cy + half)]
        return _polygon_mask(xs, ys, verts)
    if name == "blob":
        mask = np.zeros_like(xs, dtype=bool)
        for dx, dy, r in params["lobes"]:
            mask |= (xs - (cx + dx)) ** 2 + (ys - (cy + dy)) ** 2 <= r ** 2
        return mask
    if name == "stripe":
        theta = params["angle"]
        u = (xs - cx) * np.cos(theta) + (ys - cy) * np.sin(theta)
        v = -(xs - cx) * np.sin(theta) + (ys - cy) * np.cos(theta)
        return (np.abs(u) <= half) & (np.abs(v) <= half * 0.25)
    raise ValueError(f"unknown shape '{name}'")


def _sample_shape_params(name: str, rng, cx: float, cy: float, size: float) -> dict:
    params = {"cx": cx, "cy": cy, "size": size}
    if name == "box":
        params["aspect"] = float(rng.uniform(0.8, 1.25))
    elif name == "bar":
        params["vertical"] = bool(rng.random() < 0.5)
    elif name == "blob":
        lobes = []
        for _ in range(3):
            ang = rng.uniform(0, 2 * np.pi)
            dist = rng.uniform(0.0, size * 0.22)
            lobes.append((float(dist * np.cos(ang)), float(dist * np.sin(ang)),
                          float(size * rng.uniform(0.28, 0.40))))
        params["lobes"] = tuple(lobes)
    elif name == "stripe":
        params["angle"] = float(rng.uniform(0.3, 1.3))
    return params


def _mask_bbox(mask: np.ndarray):
    """Tight (x, y, w, h) integer bounds of a mask, or None if empty."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0 or cols.size == 0:
        return None
    x, y = int(cols[0]), int(rows[0])
    return (x, y, int(cols[-1]) - x + 1, int(rows[-1]) - y + 1)


def _background(spec: SceneSpec, rng) -> np.ndarray:
    size = spec.image_size
    img = np.zeros((size, size, 3))
    top = rng.uniform(0.60, 0.78, size=3)
    bottom = top + rng.uniform(-0.12, 0.12, size=3)
    ramp = np.linspace(0.0, 1.0, size)[:, None, None]
    img[:] = top[None, None, :] * (1 - ramp) + np.clip(bottom, 0.3, 0.9)[None, None, :] * ramp
    level = spec.background_texture_level
    if level > 0:
        coarse = rng.uniform(-1.0, 1.0, size=(9, 9))
        # bilinear upsample of the coarse noise grid
        pos = np.linspace(0.0, 8.0, size)
        i0 = np.floor(pos).astype(int).clip(0, 7)
        frac = pos - i0
        rows = coarse[i0][:, i0] * np.outer(1 - frac, 1 - frac) \
            + coarse[i0 + 1][:, i0] * np.outer(frac, 1 - frac) \
            + coarse[i0][:, i0 + 1] * np.outer(1 - frac, frac) \
            + coarse[i0 + 1][:, i0 + 1] * np.outer(frac, frac)
        img += 0.16 * level * rows[:, :, None]
        img += 0.035 * level * rng.standard_normal((size, size, 3))
    return np.clip(img, 0.0, 1.0)


def _bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def generate_scene(spec: SceneSpec, seed: int):
    """Render one scene; fully determined by (spec, seed).

    Returns ``(image, annotations)`` where image is float64 (H, W, 3) in
    [0, 1] quantized to 8-bit levels, and each annotation is a dict with
    ``category_id``, a tight integer ``bbox`` (x, y, w, h) and the
    ``shape`` parameters it was rendered from.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    size = spec.image_size
    img = _background(spec, rng)
    classes = DOMAIN_CLASSES[spec.domain]
    lo, hi = spec.object_count_range
    count = int(rng.integers(lo, hi + 1))

    annotations = []
    placed_bboxes = []
    for _ in range(count):
        for _attempt in range(60):
            name, cat_id = classes[int(rng.integers(0, len(classes)))]
            s = float(rng.uniform(*spec.size_range))
            if spec.domain == "S":
                margin = s / 2 + 2
                if 2 * margin >= size:
                    continue
                cx = float(rng.uniform(margin, size - margin))
                cy = float(rng.uniform(margin, size - margin))
            else:
                # allow truncation at the borders
                if placed_bboxes and rng.random() < spec.occlusion_probability:
                    bx, by, bw, bh = placed_bboxes[int(rng.integers(0, len(placed_bboxes)))]
                    cx = bx + bw / 2 + float(rng.uniform(-0.8, 0.8)) * (bw + s) / 2
                    cy = by + bh / 2 + float(rng.uniform(-0.8, 0.8)) * (bh + s) / 2
                else:
                    cx = float(rng.uniform(-s / 4, size + s / 4))
                    cy = float(rng.uniform(-s / 4, size + s / 4))
            params = _sample_shape_params(name, rng, cx, cy, s)
            mask = shape_mask(name, params, size)
            bbox = _mask_bbox(mask)
            if bbox is None or bbox[2] < 3 or bbox[3] < 3:
                continue
            if spec.domain == "S" and any(_bbox_iou(bbox, p) > 0.05 for p in placed_bboxes):
                continue
            color = np.clip(np.asarray(_BASE_COLORS[name]) + rng.uniform(-0.08, 0.08, 3),
                            0.02, 0.98)
            img[mask] = color
            placed_bboxes.append(bbox)
            annotations.append({
                "category_id": cat_id,
                "bbox": list(bbox),
                "shape": {"name": name, "params": params},
            })
            break

    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return img, annotations


def horizontal_flip(image: np.ndarray, annotations):
    """Mirror a scene about the vertical axis; bbox x becomes W - x - w."""
    width = image.shape[1]
    flipped = image[:, ::-1].copy()
    out = []
    for ann in annotations:
        new = dict(ann)
        x, y, w, h = ann["bbox"]
        new["bbox"] = [width - x - w, y, w, h]
        out.append(new)
    return flipped, out


def generate_scenes(domain: str, count: int, seed: int, image_size: int = 128,
                    spec: SceneSpec | None = None):
    """Generate ``count`` scenes with per-image seeds derived from ``seed``."""
    if spec is None:
        spec = default_spec(domain, image_size)
    scenes = []
    for index in range(count):
        scene_seed = substream_seed(seed, "scene", domain, index)
        scenes.append(generate_scene(spec, scene_seed))
    return scenes
