"""Named-tensor checkpoint files.

Layout: 4-byte magic ``NTC1``, u32 little-endian header length, UTF-8 JSON
header, then the concatenated float32 little-endian payload. The header
lists each tensor's name, shape and payload offset plus an arbitrary
``meta`` object (model configuration, label map). Headers are serialized
with sorted keys so identical state produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"NTC1"


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    index = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        shape = list(np.asarray(tensors[name]).shape)
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        index.append({"name": name, "shape": shape, "offset": offset})
        raw = arr.tobytes()
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"tensors": index, "meta": meta or {}}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in chunks:
            fh.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (header_len,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + header_len].decode("utf-8"))
    payload = raw[8 + header_len:]
    tensors = {}
    for item in header["tensors"]:
        shape = tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = item["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[item["name"]] = arr.reshape(shape).copy()
    return tensors, header.get("meta", {})
