"""Flat binary tensor container.

Layout: a UTF-8 text header terminated by an ``end`` line, then raw tensor
data.  Every tensor is stored as little-endian 64-bit floats in C order at
the byte offset (relative to the start of the data section) declared in its
header line::

    poseaug-tensors v1
    tensor <name> <dim0,dim1,...> <offset>
    ...
    end

Scalar tensors declare an empty shape field as ``-``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DatasetParseError

__all__ = ["save_tensors", "load_tensors"]

_MAGIC = "poseaug-tensors v1"


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors; insertion order is preserved."""
    header = [_MAGIC]
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "-"
        header.append(f"tensor {name} {shape} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header.append("end\n")
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0 or data[:nl].decode("utf-8", "replace") != _MAGIC:
        raise DatasetParseError(f"{path}: not a {_MAGIC!r} container")
    # Scan header lines until "end"; the data section starts right after.
    pos = nl + 1
    entries = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise DatasetParseError(f"{path}: unterminated header")
        line = data[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        parts = line.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise DatasetParseError(f"{path}: bad header line {line!r}")
        _, name, shape_s, offset_s = parts
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
        entries.append((name, shape, int(offset_s)))
    base = pos
    out: dict[str, np.ndarray] = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=base + offset)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
