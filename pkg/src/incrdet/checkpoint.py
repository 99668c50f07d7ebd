"""Bit-exact checkpoint format.

A checkpoint is a pair of files sharing a base path: ``<base>.json`` (the
manifest: format version, architecture/meta blobs, and per-parameter
name/shape/byte-offset entries) and ``<base>.bin`` (one little-endian
float64 blob).  Parameters are stored sorted by name so identical models
serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(base_path, params: dict, arch: dict, meta: dict | None = None) -> None:
    base = Path(base_path)
    entries = []
    blob = bytearray()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype=np.float64)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": len(blob),
        })
        blob.extend(arr.astype("<f8").tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "arch": arch,
        "meta": meta or {},
        "params": entries,
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    base.with_suffix(".bin").write_bytes(bytes(blob))


def load_checkpoint(base_path):
    """Load ``(params, arch, meta)``; loading is bit-exact."""
    base = Path(base_path)
    manifest_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".bin")
    if not manifest_path.exists():
        raise CheckpointError(f"missing checkpoint manifest {manifest_path}")
    if not blob_path.exists():
        raise CheckpointError(f"missing checkpoint blob {blob_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed checkpoint manifest {manifest_path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {manifest.get('format_version')!r}")
    blob = blob_path.read_bytes()
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(blob):
            raise CheckpointError(f"blob too short for parameter '{entry['name']}'")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape).copy()
        params[entry["name"]] = arr
    return params, manifest["arch"], manifest.get("meta", {})
