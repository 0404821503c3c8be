"""Reader/writer for the MSEV tensor container and its JSON manifests.

This mirrors the simulation harness's wire format so the predictor can
exchange data with it through files alone:

    magic "MSEV" | version u32 LE | rank u32 LE (=5) | dims 5 x u32 LE |
    dtype u8 (0 = f32 LE) | payload row-major (B, T, C, H, W) f32 LE
"""

import json
import struct

import numpy as np

MAGIC = b"MSEV"
VERSION = 1
RANK = 5
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sII5IB")


class TensorFormatError(Exception):
    pass


def write_tensor(path, dims, payload):
    dims = tuple(int(d) for d in dims)
    if len(dims) != RANK or any(d <= 0 for d in dims):
        raise ValueError(f"bad dims {dims}")
    data = np.ascontiguousarray(payload, dtype="<f4")
    if data.size != int(np.prod(dims)):
        raise ValueError(f"payload size {data.size} does not match dims {dims}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, RANK, *dims, DTYPE_F32))
        fh.write(data.tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TensorFormatError(f"{path}: shorter than header")
    magic, version, rank, *dims, dtype = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION or rank != RANK or dtype != DTYPE_F32:
        raise TensorFormatError(f"{path}: unsupported header fields")
    dims = tuple(dims)
    expected = int(np.prod(dims)) * 4
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise TensorFormatError(f"{path}: payload is {len(body)} bytes, "
                                f"expected {expected}")
    return dims, np.frombuffer(body, dtype="<f4").reshape(dims)


def write_manifest(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)
