"""Forecasting with zero-padded short inputs and iterative roll-out."""

import numpy as np
import torch

from . import msevio
from .data import pad_leading_zeros, rollout_segments
from .train import checkpoint_digest


@torch.no_grad()
def forecast(model, observed, horizon):
    """Predict `horizon` frames from 1..input_len observed frames.

    observed is (k, 1, H, W); beyond output_len the final input_len
    predictions are fed back as the next input. Returns (horizon, 1, H, W).
    """
    cfg = model.cfg
    model.eval()
    window = pad_leading_zeros(observed, cfg.input_len)
    chunks = []
    for n in rollout_segments(horizon, cfg.output_len):
        pred = model(window.unsqueeze(0))[0]  # (T', 1, H, W)
        chunks.append(pred[:n])
        window = torch.cat([window, pred[:n]])[-cfg.input_len:]
    return torch.cat(chunks)


def forecast_clips(model, inputs, horizon, observed=None):
    """Batch forecast: inputs (n, T, 1, H, W) -> (n, horizon, 1, H, W).

    With observed < input_len, only the trailing `observed` frames of each
    input are used and the rest is zero-padded.
    """
    outs = []
    for clip in inputs:
        frames = clip if observed is None else clip[-observed:]
        outs.append(forecast(model, frames, horizon))
    return torch.stack(outs)


def write_predictions(preds, path, checkpoint_path=None, manifest_extra=None):
    """Write predictions as an MSEV tensor plus a JSON run manifest."""
    arr = np.asarray(preds.detach().cpu().numpy(), dtype="<f4")
    msevio.write_tensor(path, arr.shape, arr)
    doc = {
        "dims": list(arr.shape),
        "sim_kind": "prediction",
        "checkpoint_sha256": checkpoint_digest(checkpoint_path)
        if checkpoint_path else None,
    }
    doc.update(manifest_extra or {})
    msevio.write_manifest(str(path) + ".json", doc)
