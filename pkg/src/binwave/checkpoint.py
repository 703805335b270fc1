"""Checkpoint format: JSON manifest plus one little-endian float32 blob.

A checkpoint is a pair of files sharing a stem: ``<stem>.json`` lists each
tensor's name, shape, dtype and byte offset (plus free-form metadata), and
``<stem>.bin`` holds the raw values. Storage is float32; the write/read
round trip is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "manifest_path", "blob_path"]

_FORMAT = "binwave-checkpoint-v1"


def manifest_path(stem: str) -> str:
    return stem + ".json"


def blob_path(stem: str) -> str:
    return stem + ".bin"


def save_checkpoint(stem: str, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write ``tensors`` (name -> array) and ``meta`` under ``stem``.

    Values are cast to little-endian float32 in the blob; offsets in the
    manifest are byte positions into the blob file.
    """
    entries = []
    offset = 0
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": int(arr.nbytes),
        })
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"format": _FORMAT, "tensors": entries, "meta": meta or {}}
    os.makedirs(os.path.dirname(os.path.abspath(stem)), exist_ok=True)
    with open(manifest_path(stem), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(blob_path(stem), "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(stem: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as (name -> float64 array, meta).

    float32 -> float64 widening is exact, so save(load(...)) reproduces the
    original files byte for byte.
    """
    with open(manifest_path(stem)) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != _FORMAT:
        raise ValueError(f"not a recognized checkpoint manifest: {manifest_path(stem)}")
    with open(blob_path(stem), "rb") as fh:
        blob = fh.read()
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = entry["offset"]
        end = start + entry["nbytes"]
        if end > len(blob):
            raise ValueError(f"checkpoint blob truncated: need {end} bytes, have {len(blob)}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(np.float64)
    return tensors, manifest.get("meta", {})
