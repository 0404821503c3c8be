"""Clip loading, zero-padding, and iterative roll-out planning."""

import numpy as np
import torch

from . import msevio


def load_clips(inputs_path, targets_path=None):
    """Read clip tensors into float32 torch tensors (n, T, 1, H, W)."""
    _, inputs = msevio.read_tensor(inputs_path)
    inputs = torch.from_numpy(np.array(inputs, dtype=np.float32))
    if targets_path is None:
        return inputs
    _, targets = msevio.read_tensor(targets_path)
    return inputs, torch.from_numpy(np.array(targets, dtype=np.float32))


def pad_leading_zeros(frames, target_len):
    """Prepend zero frames so the sequence reaches target_len."""
    k = frames.shape[0]
    if not 1 <= k <= target_len:
        raise ValueError(f"need 1..{target_len} frames, got {k}")
    if k == target_len:
        return frames
    pad = torch.zeros((target_len - k,) + tuple(frames.shape[1:]),
                      dtype=frames.dtype)
    return torch.cat([pad, frames])


def rollout_segments(horizon, output_len):
    """Frames to predict per forward pass; later passes feed back outputs."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    segments = []
    remaining = horizon
    while remaining > 0:
        n = min(remaining, output_len)
        segments.append(n)
        remaining -= n
    return segments
