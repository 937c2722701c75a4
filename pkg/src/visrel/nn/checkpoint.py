"""Self-describing binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint32 header length, a UTF-8
JSON header, then the raw tensor payloads. The header records free-form
metadata (architecture hyperparameters, training state) plus the name and
shape of every tensor in payload order. Tensor data is always little-endian
float32.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"VRELCKPT"
FORMAT_VERSION = 1


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    names = list(arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.asarray(arrays[n]).shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(FORMAT_VERSION).tobytes())
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        for n in names:
            arr = np.ascontiguousarray(arrays[n], dtype="<f4")
            f.write(arr.tobytes())


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        hlen = int(np.frombuffer(f.read(4), dtype=np.uint32)[0])
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"truncated payload for tensor {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return arrays, header["meta"]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
