"""SSEM: little-endian binary matrix files for features and embeddings.

Layout: ``b"SSEM"``, format version (u8), rows (u32), cols (u32), then
``rows * cols`` float32 values in row-major order.
"""
import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"SSEM"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


def write_matrix(matrix, path):
    """Write a 2-D array as float32. Non-float32 input is cast first."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise FormatError(f"expected a 2-D matrix, got shape {m.shape}")
    m = np.ascontiguousarray(m, dtype="<f4")
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]))
        fh.write(m.tobytes(order="C"))
    os.replace(tmp, path)


def read_matrix(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_matrix(blob, source=str(path))


def decode_matrix(blob, source="<bytes>"):
    if len(blob) < _HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"{source}: expected {expected} bytes for {rows}x{cols}, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size, count=rows * cols)
    return data.reshape(rows, cols).astype(np.float32)


# feature-specific aliases
write_features = write_matrix
read_features = read_matrix
