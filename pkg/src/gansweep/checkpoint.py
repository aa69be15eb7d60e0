"""Versioned binary checkpoints shared by the GAN and classifier.

Layout::

    b"GSWPCKPT"            8-byte magic
    uint16 version         little endian
    uint32 header_len
    header                 UTF-8 JSON: user metadata plus a tensor table
    payload                raw little-endian arrays in table order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IngestionError

MAGIC = b"GSWPCKPT"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray], header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    blobs = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name])
        dtype = arr.dtype.newbyteorder("<")
        table.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(dtype, copy=False).tobytes())
    meta = json.dumps({"meta": header, "tensors": table}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(meta)))
        fh.write(meta)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise IngestionError(f"{path} is not a checkpoint file")
    version, meta_len = struct.unpack_from("<HI", raw, len(MAGIC))
    if version != VERSION:
        raise IngestionError(f"{path}: unsupported checkpoint version {version}")
    offset = len(MAGIC) + struct.calcsize("<HI")
    meta = json.loads(raw[offset : offset + meta_len])
    offset += meta_len
    state = {}
    for entry in meta["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = arr.astype(dtype.newbyteorder("="))
        offset += count * dtype.itemsize
    return state, meta["meta"]
