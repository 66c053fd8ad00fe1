"""Binary checkpoint container: a JSON header followed by raw tensor data.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"PLCKPT01"``
    bytes 8..15   uint64 header length N
    bytes 16..16+N  UTF-8 JSON header
    remainder     tensor payloads, C-order little-endian, at the offsets
                  given in the header (relative to the end of the header)

Header schema::

    {"tensors": {name: {"shape": [...], "dtype": "<f8"|"<f4", "offset": int}},
     "meta": {...}}

Tensors are laid out in sorted-name order and the JSON is serialized with
sorted keys, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PLCKPT01"

_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def save_checkpoint(path, tensors: dict, meta: dict | None = None):
    arrays = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float64:
            arr = arr.astype("<f8")
        elif arr.dtype == np.float32:
            arr = arr.astype("<f4")
        else:
            raise TypeError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        arrays[name] = np.ascontiguousarray(arr)

    header = {"tensors": {}, "meta": meta or {}}
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        header["tensors"][name] = {
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": offset,
        }
        offset += arr.nbytes

    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(arrays):
            fh.write(arrays[name].tobytes())


def load_checkpoint(path):
    """Returns (tensors: dict[str, ndarray], meta: dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = fh.read()

    tensors = {}
    for name, info in header["tensors"].items():
        dtype = _DTYPES[info["dtype"]]
        shape = tuple(info["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=start)
        tensors[name] = arr.reshape(shape).copy()
    return tensors, header.get("meta", {})
