"""Single-file checkpoint format.

Layout: an 8-byte little-endian unsigned header length, a UTF-8 JSON header
mapping each name to ``{"dtype", "shape", "offset", "nbytes"}`` (offsets are
relative to the end of the header), then the raw little-endian buffers in
header order.  An optional ``"__metadata__"`` entry holds free-form strings.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = ["save_arrays", "load_arrays", "encode_arrays", "decode_arrays"]

_DTYPES = {"f32": "<f4", "f64": "<f8", "i32": "<i4", "i64": "<i8", "u8": "|u1", "u16": "<u2"}
_NAMES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


def encode_arrays(arrays: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> bytes:
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        key = np.dtype(le.dtype).str
        if key not in _NAMES:
            raise TypeError(f"array {name!r}: unsupported dtype {arr.dtype}")
        buf = np.ascontiguousarray(le).tobytes()
        header[name] = {"dtype": _NAMES[key], "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(buf)}
        chunks.append(buf)
        offset += len(buf)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return struct.pack("<Q", len(head)) + head + b"".join(chunks)


def decode_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    (n,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8:8 + n])
    metadata = header.pop("__metadata__", {})
    base = 8 + n
    arrays = {}
    for name, entry in header.items():
        start = base + entry["offset"]
        raw = blob[start:start + entry["nbytes"]]
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, metadata


def save_arrays(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
                metadata: Mapping[str, str] | None = None) -> None:
    """Write atomically so re-running never leaves a truncated file behind."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_arrays(arrays, metadata))
    os.replace(tmp, path)


def load_arrays(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return decode_arrays(Path(path).read_bytes())
