import numpy as np
import pytest
import torch

from msevnet.model import Forecaster, ModelConfig, mse_loss

torch.set_num_threads(2)


def micro_config():
    # 2 frames, 8x8, 4 channels: small enough for finite differences
    return ModelConfig(input_len=2, output_len=2, spatial_blocks=1,
                       spatial_channels=4, temporal_blocks=1,
                       temporal_channels=4, downsample_factor=2,
                       embed_dim=4, spatial_radius=1)


def test_full_model_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = Forecaster(micro_config()).double()
    x = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64)
    target = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64)

    def loss_value():
        return mse_loss(model(x), target)

    loss = loss_value()
    model.zero_grad()
    loss.backward()

    rng = np.random.default_rng(1)
    h = 1e-6
    checked = 0
    params = [p for p in model.parameters() if p.requires_grad]
    for p in params:
        flat = p.detach().reshape(-1)
        grad = p.grad.reshape(-1)
        for idx in rng.choice(flat.numel(), size=min(4, flat.numel()),
                              replace=False):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + h
                lp = loss_value().item()
                flat[idx] = orig - h
                lm = loss_value().item()
                flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            analytic = grad[idx].item()
            assert abs(analytic - fd) <= 1e-3 * max(1.0, abs(fd), abs(analytic)), \
                (p.shape, idx, analytic, fd)
            checked += 1
    assert checked >= 30


def test_input_gradients_match_finite_differences():
    torch.manual_seed(2)
    model = Forecaster(micro_config()).double()
    x = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    target = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64)
    loss = mse_loss(model(x), target)
    loss.backward()
    h = 1e-6
    rng = np.random.default_rng(3)
    with torch.no_grad():
        for _ in range(10):
            t, r, c = rng.integers(0, 2), rng.integers(0, 8), rng.integers(0, 8)
            orig = x[0, t, 0, r, c].item()
            x[0, t, 0, r, c] = orig + h
            lp = mse_loss(model(x), target).item()
            x[0, t, 0, r, c] = orig - h
            lm = mse_loss(model(x), target).item()
            x[0, t, 0, r, c] = orig
            fd = (lp - lm) / (2 * h)
            analytic = x.grad[0, t, 0, r, c].item()
            assert abs(analytic - fd) <= 1e-3 * max(1.0, abs(fd), abs(analytic))
