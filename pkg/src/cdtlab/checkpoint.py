"""Named-tensor checkpoint store: manifest.json + little-endian f32 payload.

The format is shared by every trained model in the repo.  Round-trips are
bit-exact: arrays are serialized as '<f4' in manifest order.
"""
from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .autodiff import Tensor


class CheckpointError(Exception):
    pass


def save_checkpoint(params, dirpath):
    """Write a dict of name -> Tensor/ndarray to `dirpath`."""
    os.makedirs(dirpath, exist_ok=True)
    manifest = []
    blobs = []
    offset = 0
    for name, value in params.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
            "length": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    with open(os.path.join(dirpath, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    with open(os.path.join(dirpath, "weights.bin"), "wb") as f:
        f.write(b"".join(blobs))


def load_checkpoint(dirpath):
    """Read a checkpoint directory back into a dict of name -> float32 ndarray."""
    manifest_path = os.path.join(dirpath, "manifest.json")
    weights_path = os.path.join(dirpath, "weights.bin")
    if not os.path.exists(manifest_path) or not os.path.exists(weights_path):
        raise CheckpointError(f"not a checkpoint directory: {dirpath}")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    with open(weights_path, "rb") as f:
        blob = f.read()
    out = {}
    for entry in manifest:
        if entry["dtype"] != "f32":
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r} for {entry['name']!r}")
        raw = blob[entry["offset"]:entry["offset"] + entry["length"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        out[entry["name"]] = arr.astype(np.float32)
    return out


def checkpoint_hash(dirpath):
    """SHA-256 over manifest bytes followed by weight bytes."""
    h = hashlib.sha256()
    for fname in ("manifest.json", "weights.bin"):
        with open(os.path.join(dirpath, fname), "rb") as f:
            h.update(f.read())
    return h.hexdigest()
