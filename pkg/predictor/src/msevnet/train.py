"""Training loop: parallel multi-step supervision with the pixel-sum MSE.

The whole output horizon is predicted in one forward pass and supervised
jointly; there is no autoregressive unrolling at train time.
"""

import hashlib
import json

import torch

from .data import load_clips
from .model import Forecaster, ModelConfig, mse_loss


def train(inputs_path, targets_path, cfg, out_checkpoint, epochs=20,
          batch_size=1, lr=1e-3, seed=0, loss_curve_path=None, device="cpu"):
    """Train a Forecaster on a clip dataset; returns (model, epoch_losses)."""
    torch.manual_seed(seed)
    inputs, targets = load_clips(inputs_path, targets_path)
    if inputs.shape[1] != cfg.input_len:
        raise ValueError(f"dataset input length {inputs.shape[1]} does not "
                         f"match config input_len {cfg.input_len}")
    if targets.shape[1] != cfg.output_len:
        raise ValueError(f"dataset target length {targets.shape[1]} does not "
                         f"match config output_len {cfg.output_len}")
    n = inputs.shape[0]
    model = Forecaster(cfg).to(device)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    steps_per_epoch = (n + batch_size - 1) // batch_size
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(1, epochs * steps_per_epoch))
    gen = torch.Generator().manual_seed(seed)

    epoch_losses = []
    for epoch in range(epochs):
        order = torch.randperm(n, generator=gen)
        total = 0.0
        model.train()
        for b0 in range(0, n, batch_size):
            idx = order[b0:b0 + batch_size]
            pred = model(inputs[idx].to(device))
            loss = mse_loss(pred, targets[idx].to(device))
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, "
                    f"step {b0 // batch_size}; lower the learning rate"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            total += loss.item() * len(idx)
        epoch_losses.append(total / n)

    save_checkpoint(model, cfg, out_checkpoint, epoch_losses, seed)
    if loss_curve_path:
        with open(loss_curve_path, "w") as fh:
            json.dump({"epoch_losses": epoch_losses, "lr": lr, "seed": seed},
                      fh, indent=2)
    return model, epoch_losses


def save_checkpoint(model, cfg, path, epoch_losses=None, seed=None):
    torch.save({
        "config": cfg.to_dict(),
        "state_dict": model.state_dict(),
        "epoch_losses": epoch_losses or [],
        "seed": seed,
    }, path)


def load_checkpoint(path, device="cpu"):
    doc = torch.load(path, map_location=device, weights_only=False)
    cfg = ModelConfig(**doc["config"])
    model = Forecaster(cfg).to(device)
    model.load_state_dict(doc["state_dict"])
    model.eval()
    return model, cfg


def checkpoint_digest(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
