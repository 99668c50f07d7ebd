"""Dataset persistence: PNG images plus one JSON annotation file.

The JSON layout follows the common detection-annotation convention:
``images`` / ``annotations`` / ``categories`` arrays, with boxes stored
as (x, y, w, h).  Loading validates referential integrity and box bounds
and reports the offending record by id.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .scenes import DOMAIN_CLASSES

DATASET_FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    pass


def write_dataset(path, scenes, domain: str) -> None:
    """Write generated scenes to ``path``: PNGs plus annotations.json."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    images = []
    annotations = []
    ann_id = 0
    for image_id, (img, anns) in enumerate(scenes):
        file_name = f"{domain}_{image_id:06d}.png"
        arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(root / file_name)
        height, width = arr.shape[:2]
        images.append({
            "id": image_id,
            "file_name": file_name,
            "width": width,
            "height": height,
            "domain": domain,
        })
        for ann in anns:
            annotations.append({
                "id": ann_id,
                "image_id": image_id,
                "category_id": int(ann["category_id"]),
                "bbox": [int(v) for v in ann["bbox"]],
            })
            ann_id += 1
    payload = {
        "format_version": DATASET_FORMAT_VERSION,
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": cid, "name": name, "domain": domain}
            for name, cid in DOMAIN_CLASSES[domain]
        ],
    }
    (root / "annotations.json").write_text(json.dumps(payload, indent=1, sort_keys=True))


class Dataset:
    """Loaded dataset handle; image pixels are read lazily and cached as uint8."""

    def __init__(self, root: Path, images, annotations, categories):
        self.root = Path(root)
        self.images = images
        self.annotations = annotations
        self.categories = categories
        self.images_by_id = {im["id"]: im for im in images}
        self.annotations_by_image = {im["id"]: [] for im in images}
        for ann in annotations:
            self.annotations_by_image[ann["image_id"]].append(ann)
        self._pixel_cache: dict = {}

    def __len__(self):
        return len(self.images)

    @property
    def image_ids(self):
        return [im["id"] for im in self.images]

    @property
    def domain(self) -> str:
        domains = {im["domain"] for im in self.images} or {c["domain"] for c in self.categories}
        if len(domains) != 1:
            raise DatasetError(f"dataset mixes domains {sorted(domains)}")
        return next(iter(domains))

    def load_pixels(self, image_id: int) -> np.ndarray:
        """uint8 (H, W, 3) pixels for one image."""
        if image_id not in self._pixel_cache:
            record = self.images_by_id[image_id]
            path = self.root / record["file_name"]
            with Image.open(path) as im:
                self._pixel_cache[image_id] = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return self._pixel_cache[image_id]

    def load_image(self, image_id: int) -> np.ndarray:
        """float64 (H, W, 3) image in [0, 1]."""
        return self.load_pixels(image_id).astype(np.float64) / 255.0


def load_dataset(path) -> Dataset:
    root = Path(path)
    ann_path = root / "annotations.json"
    if not ann_path.exists():
        raise DatasetError(f"missing annotation file {ann_path}")
    try:
        payload = json.loads(ann_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON in {ann_path}: {exc}") from exc
    if payload.get("format_version") != DATASET_FORMAT_VERSION:
        raise DatasetError(
            f"unsupported dataset format_version {payload.get('format_version')!r}")

    images = payload["images"]
    categories = payload["categories"]
    category_ids = {c["id"] for c in categories}
    image_by_id = {}
    for im in images:
        image_by_id[im["id"]] = im
        if not (root / im["file_name"]).exists():
            raise DatasetError(f"image file '{im['file_name']}' (id {im['id']}) is missing")
    for ann in payload["annotations"]:
        if ann["image_id"] not in image_by_id:
            raise DatasetError(
                f"annotation {ann['id']} references unknown image_id {ann['image_id']}")
        if ann["category_id"] not in category_ids:
            raise DatasetError(
                f"annotation {ann['id']} references unknown category_id {ann['category_id']}")
        x, y, w, h = ann["bbox"]
        im = image_by_id[ann["image_id"]]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > im["width"] or y + h > im["height"]:
            raise DatasetError(
                f"annotation {ann['id']} bbox {ann['bbox']} lies outside image {im['id']} "
                f"({im['width']}x{im['height']})")
    return Dataset(root, images, payload["annotations"], categories)


def split_image_ids(image_ids, val_fraction: float, rng) -> tuple:
    """Deterministic train/val split by seeded shuffle of image ids."""
    ids = list(image_ids)
    order = rng.permutation(len(ids))
    n_val = int(round(len(ids) * val_fraction))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val
