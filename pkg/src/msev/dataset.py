"""Sliding-window clip construction and roll-out schedules.

A clip pairs input_len consecutive frames with the subsequent output_len
frames. Windows slide with a fixed stride over each trajectory; splits
are disjoint at the trajectory level. Horizons beyond output_len are
served by feeding the final input_len predictions back as a new input.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensorio


@dataclass
class ClipSpec:
    input_len: int = 10
    output_len: int = 90
    stride: int = 10

    def __post_init__(self):
        if self.input_len < 1 or self.output_len < 1 or self.stride < 1:
            raise ValueError("input_len, output_len, and stride must be >= 1")

    @property
    def window(self):
        return self.input_len + self.output_len


@dataclass
class ClipDataset:
    """Windowed (input, target) pairs in (n, T, 1, H, W) layout."""

    inputs: np.ndarray
    targets: np.ndarray
    provenance: list = field(default_factory=list)  # (trajectory id, window start)
    split: str = ""

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class RolloutSchedule:
    """Ordered prediction segments: (source, frames to predict).

    The first segment consumes observed frames; later segments feed the
    previous segment's final predictions back as input.
    """

    segments: list

    @property
    def horizon(self):
        return sum(n for _, n in self.segments)


def count_windows(n_frames, spec):
    """Number of stride-spaced windows fitting in n_frames (0 if too short)."""
    if n_frames < spec.window:
        return 0
    return (n_frames - spec.window) // spec.stride + 1


def build_clips(frames, traj_id, spec):
    """Slice one trajectory into clips; returns an unsplit ClipDataset.

    frames may be (T, H, W) or (T, 1, H, W); values pass through untouched
    so clip frames stay byte-identical to the source.
    """
    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[:, None, :, :]
    if frames.ndim != 4 or frames.shape[1] != 1:
        raise ValueError(f"expected (T, H, W) or (T, 1, H, W) frames, got {frames.shape}")
    n = count_windows(frames.shape[0], spec)
    inputs = np.empty((n, spec.input_len) + frames.shape[1:], dtype=frames.dtype)
    targets = np.empty((n, spec.output_len) + frames.shape[1:], dtype=frames.dtype)
    provenance = []
    for k in range(n):
        s = k * spec.stride
        inputs[k] = frames[s:s + spec.input_len]
        targets[k] = frames[s + spec.input_len:s + spec.window]
        provenance.append((traj_id, s))
    return ClipDataset(inputs, targets, provenance)


def concat_clips(fragments, split=""):
    frags = [f for f in fragments if len(f)]
    if not frags:
        raise ValueError("no clips to concatenate")
    inputs = np.concatenate([f.inputs for f in frags])
    targets = np.concatenate([f.targets for f in frags])
    provenance = [p for f in frags for p in f.provenance]
    return ClipDataset(inputs, targets, provenance, split)


def pad_input(frames, target_len):
    """Prepend all-zero frames until the sequence reaches target_len."""
    frames = np.asarray(frames)
    if frames.ndim < 3:
        raise ValueError("frames must be at least (T, H, W)")
    k = frames.shape[0]
    if k < 1:
        raise ValueError("need at least one frame")
    if k > target_len:
        raise ValueError(f"{k} frames exceed the target length {target_len}")
    if k == target_len:
        return frames
    pad = np.zeros((target_len - k,) + frames.shape[1:], dtype=frames.dtype)
    return np.concatenate([pad, frames])


def make_rollout_schedule(observed, horizon, spec):
    """Plan prediction segments for an arbitrary horizon.

    The first segment predicts up to output_len frames from the observed
    input (zero-padded when observed < input_len); each later segment
    feeds the last input_len predictions back, until the horizon is met.
    """
    if observed < 1:
        raise ValueError("need at least one observed frame")
    if observed > spec.input_len:
        raise ValueError(f"observed frames exceed input_len = {spec.input_len}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    segments = [("observed", min(horizon, spec.output_len))]
    remaining = horizon - segments[0][1]
    while remaining > 0:
        n = min(remaining, spec.output_len)
        segments.append(("previous-prediction", n))
        remaining -= n
    return RolloutSchedule(segments)


def split_trajectory_ids(n_trajectories, n_train, n_val, n_test):
    """Deterministic trajectory-level partition by index order."""
    if n_train + n_val + n_test > n_trajectories:
        raise ValueError("split sizes exceed the number of trajectories")
    ids = list(range(n_trajectories))
    splits = {
        "train": ids[:n_train],
        "validation": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:n_train + n_val + n_test],
    }
    seen = set()
    for members in splits.values():
        overlap = seen.intersection(members)
        if overlap:
            raise ValueError(f"trajectory ids {sorted(overlap)} appear in two splits")
        seen.update(members)
    return splits


def save_clip_dataset(ds, inputs_path, targets_path, manifest_path):
    n, ti, c, h, w = ds.inputs.shape
    tensorio.write_tensor(inputs_path, ds.inputs.shape, ds.inputs)
    tensorio.write_tensor(targets_path, ds.targets.shape, ds.targets)
    tensorio.write_manifest(
        manifest_path,
        ds.inputs.shape,
        None,
        {
            "input_len": ti,
            "output_len": ds.targets.shape[1],
            "split": ds.split,
            "provenance": [[int(t), int(s)] for t, s in ds.provenance],
        },
        None,
        "clip-dataset",
        dims_targets=list(ds.targets.shape),
    )


def load_clip_dataset(inputs_path, targets_path, manifest_path=None):
    _, inputs = tensorio.read_tensor(inputs_path)
    _, targets = tensorio.read_tensor(targets_path)
    provenance = []
    split = ""
    if manifest_path is not None:
        man = tensorio.read_manifest(manifest_path)
        provenance = [tuple(p) for p in man["params"].get("provenance", [])]
        split = man["params"].get("split", "")
    return ClipDataset(np.array(inputs), np.array(targets), provenance, split)
