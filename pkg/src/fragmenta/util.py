"""Small shared helpers: named deterministic RNG streams and atomic JSON."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic named sub-stream of the root seed."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), tag]))


def write_json_atomic(path, obj, indent: int = 1) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=indent, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def jsonify(obj):
    """Recursively convert numpy scalars/arrays for the json module."""
    if isinstance(obj, dict):
        return {k: jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
