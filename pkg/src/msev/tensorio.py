"""Binary tensor container, trajectory persistence, and image export.

All stored tensors share a single fixed-layout format ("MSEV"):

    magic   4 bytes  b"MSEV"
    version u32 LE   (currently 1)
    rank    u32 LE   (always 5)
    dims    5 x u32 LE   (B, T, C, H, W)
    dtype   u8       (0 = float32 little-endian)
    payload row-major float32 LE, product(dims) elements

Solvers run in float64 internally; payloads are downcast to float32 on
write. A JSON manifest sidecar carries dims, seed, solver parameters,
frame interval, and simulation kind, so every tensor on disk can be
regenerated from its manifest alone.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MSEV"
VERSION = 1
RANK = 5
DTYPE_F32 = 0
HEADER_LEN = 4 + 4 + 4 + 5 * 4 + 1  # 33 bytes

_HEADER_STRUCT = struct.Struct("<4sII5IB")


class TensorFormatError(Exception):
    """Raised for malformed tensor files (bad magic, truncation, ...)."""


@dataclass
class Trajectory:
    """Time-ordered sequence of scalar fields plus simulation metadata.

    frames is a (T, H, W) float array; frame_interval is the dimensionless
    time between recorded frames.
    """

    frames: np.ndarray
    frame_interval: float
    sim_kind: str
    rng_seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("trajectory contains non-finite values")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]


def write_tensor(path, dims, payload):
    """Write a 5D float32 tensor with the fixed binary header.

    dims is the (B, T, C, H, W) tuple; payload is any array whose element
    count matches product(dims). Output is byte-identical for identical
    inputs.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != RANK:
        raise ValueError(f"expected rank {RANK} dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    data = np.ascontiguousarray(payload, dtype="<f4")
    expected = int(np.prod(dims))
    if data.size != expected:
        raise ValueError(
            f"payload has {data.size} elements, dims {dims} require {expected}"
        )
    header = _HEADER_STRUCT.pack(MAGIC, VERSION, RANK, *dims, DTYPE_F32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_tensor(path):
    """Read a tensor written by write_tensor; returns (dims, payload).

    payload comes back as a float32 array already reshaped to dims.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER_LEN:
        raise TensorFormatError(f"{path}: file shorter than header ({len(raw)} bytes)")
    magic, version, rank, d0, d1, d2, d3, d4, dtype = _HEADER_STRUCT.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if rank != RANK:
        raise TensorFormatError(f"{path}: unsupported rank {rank}")
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"{path}: unsupported dtype code {dtype}")
    dims = (d0, d1, d2, d3, d4)
    expected = int(np.prod(dims)) * 4
    body = raw[HEADER_LEN:]
    if len(body) < expected:
        raise TensorFormatError(
            f"{path}: truncated payload ({len(body)} of {expected} bytes)"
        )
    if len(body) > expected:
        raise TensorFormatError(
            f"{path}: trailing bytes after payload ({len(body) - expected})"
        )
    payload = np.frombuffer(body, dtype="<f4").reshape(dims)
    return dims, payload


def export_image(field2d, path, clip_range=None):
    """Export a scalar field as an 8-bit binary PGM (P5, maxval 255).

    With clip_range=(lo, hi) the values are clipped to [lo, hi] and mapped
    affinely onto 0..255; without it the unit interval is mapped. Clipping
    affects only the exported image, never stored tensors.
    """
    arr = np.asarray(field2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D field, got shape {arr.shape}")
    lo, hi = (0.0, 1.0) if clip_range is None else (float(clip_range[0]), float(clip_range[1]))
    if not hi > lo:
        raise ValueError(f"clip range must satisfy hi > lo, got ({lo}, {hi})")
    scaled = (np.clip(arr, lo, hi) - lo) / (hi - lo)
    pixels = np.rint(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def write_manifest(path, dims, seed, params, frame_interval, sim_kind, **extra):
    doc = {
        "dims": list(int(d) for d in dims),
        "seed": int(seed) if seed is not None else None,
        "params": params,
        "frame_interval": frame_interval,
        "sim_kind": sim_kind,
    }
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)


def save_trajectories(trajectories, tensor_path, manifest_path=None):
    """Stack trajectories into one (B, T, 1, H, W) tensor plus manifest.

    All trajectories must share frame count, grid, kind, and interval.
    """
    if not trajectories:
        raise ValueError("no trajectories to save")
    first = trajectories[0]
    for tr in trajectories[1:]:
        if tr.frames.shape != first.frames.shape:
            raise ValueError("trajectories disagree on frame shape")
        if tr.sim_kind != first.sim_kind:
            raise ValueError("trajectories disagree on sim_kind")
    t, h, w = first.frames.shape
    stack = np.stack([tr.frames for tr in trajectories]).astype("<f4")
    dims = (len(trajectories), t, 1, h, w)
    write_tensor(tensor_path, dims, stack)
    if manifest_path is not None:
        write_manifest(
            manifest_path,
            dims,
            first.rng_seed,
            first.params,
            first.frame_interval,
            first.sim_kind,
            seeds=[tr.rng_seed for tr in trajectories],
        )
    return dims
