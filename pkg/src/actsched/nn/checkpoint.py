"""Binary checkpoint format.

Layout: 5-byte magic, little-endian u32 manifest length, UTF-8 JSON manifest,
then raw array payloads concatenated in manifest order. Arrays are stored
little-endian in their manifest dtype, so save/load round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ASCK1"


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    entries = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype.str}
        )
        payloads.append(arr.astype(dtype, copy=False).tobytes())
    manifest = {"meta": meta or {}, "arrays": entries}
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(n).decode())
        arrays = {}
        for entry in manifest["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(
                entry["shape"]
            ).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after payload")
    return arrays, manifest["meta"]
