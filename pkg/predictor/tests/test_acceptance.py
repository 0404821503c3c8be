"""Learning checks (acceptance criteria 14-18).

The predictor talks to the simulation harness exclusively through its
external interfaces: the `msev` CLI, MSEV tensor files, and JSON
manifests. Each criterion prints one PASS/FAIL line (run with -s).
"""

import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from msevnet import msevio
from msevnet.data import load_clips
from msevnet.model import Forecaster, GSTABlock, ModelConfig, mse_loss
from msevnet.predict import forecast, write_predictions
from msevnet.train import train

torch.set_num_threads(2)


def check(num, desc, fn):
    try:
        fn()
    except BaseException:
        print(f"[criterion {num:2d}] FAIL: {desc}")
        raise
    print(f"[criterion {num:2d}] PASS: {desc}")


def primary_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "msev.cli"] + [str(a) for a in args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, f"msev {args}: {proc.stderr}"
    return proc.stdout


# ---------------------------------------------------------------------------
# shared fixtures

@pytest.fixture(scope="session")
def overfit_model(tmp_path_factory):
    """Five clips from one 32x32 trajectory, reduced config, memorized."""
    root = tmp_path_factory.mktemp("overfit")
    primary_cli("simulate", "--kind", "grain-growth", "--out", root / "traj",
                "--grid", "32x32", "--frames", 40, "--n-grains", 30,
                "--seed", 21, "--parallel", 1)
    primary_cli("dataset", "--traj", root / "traj" / "trajectories.msev",
                "--out", root / "ds", "--input-len", 10, "--output-len", 10,
                "--stride", 5, "--train", 1)
    cfg = ModelConfig(input_len=10, output_len=10, spatial_blocks=2,
                      spatial_channels=32, temporal_blocks=2,
                      temporal_channels=64, downsample_factor=4,
                      embed_dim=32, spatial_radius=2)
    model, losses = train(root / "ds" / "train.inputs.msev",
                          root / "ds" / "train.targets.msev",
                          cfg, root / "model.pt", epochs=300, batch_size=1,
                          lr=3e-3, seed=0,
                          loss_curve_path=root / "losses.json")
    inputs, targets = load_clips(root / "ds" / "train.inputs.msev",
                                 root / "ds" / "train.targets.msev")
    return model, losses, inputs, targets


@pytest.fixture(scope="session")
def trained_64(tmp_path_factory):
    """A briefly trained 64x64 model plus one held-out trajectory."""
    root = tmp_path_factory.mktemp("e2e")
    primary_cli("simulate", "--kind", "grain-growth", "--out", root / "train",
                "--count", 4, "--seed", 100, "--grid", "64x64",
                "--frames", 200, "--parallel", 2)
    primary_cli("simulate", "--kind", "grain-growth", "--out", root / "held",
                "--count", 1, "--seed", 999, "--grid", "64x64",
                "--frames", 200, "--parallel", 1)
    primary_cli("dataset", "--traj", root / "train" / "trajectories.msev",
                "--out", root / "ds", "--input-len", 10, "--output-len", 90,
                "--stride", 45, "--train", 4)
    cfg = ModelConfig(input_len=10, output_len=90, spatial_blocks=2,
                      spatial_channels=32, temporal_blocks=2,
                      temporal_channels=64, downsample_factor=4,
                      embed_dim=32, spatial_radius=2)
    model, _ = train(root / "ds" / "train.inputs.msev",
                     root / "ds" / "train.targets.msev",
                     cfg, root / "model.pt", epochs=12, batch_size=1,
                     lr=2e-3, seed=1)
    _, held = msevio.read_tensor(root / "held" / "trajectories.msev")
    truth = torch.from_numpy(np.array(held[0], dtype=np.float32))  # (200,1,64,64)
    return root, model, truth


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a, dtype=np.float64)
                                  - np.asarray(b, dtype=np.float64)) ** 2)))


# ---------------------------------------------------------------------------
# criterion 14: overfit capacity

def test_criterion_14_overfit(overfit_model):
    model, losses, inputs, targets = overfit_model

    def body():
        with torch.no_grad():
            total = sum(mse_loss(model(inputs[j:j + 1]), targets[j:j + 1]).item()
                        for j in range(len(inputs))) / len(inputs)
        per_pixel = total / (32 * 32)
        print(f"    train loss (per-frame pixel sum) = {total:.4f}, "
              f"per-pixel MSE = {per_pixel:.3e}")
        assert per_pixel < 1e-3
        # optimization sanity: the loss curve is non-increasing after
        # smoothing over 10-epoch windows
        smoothed = [np.mean(losses[i:i + 10])
                    for i in range(0, len(losses) - 10, 10)]
        assert all(b <= a * (1 + 1e-6)
                   for a, b in zip(smoothed[:-1], smoothed[1:]))

    check(14, "5-clip overfit reaches train MSE < 1e-3 (per-pixel)", body)


# ---------------------------------------------------------------------------
# criterion 15: gSTA unit properties

def test_criterion_15_gsta_properties():
    def body():
        torch.manual_seed(0)
        block = GSTABlock(channels=6, embed_dim=4, temporal_radius=4,
                          spatial_radius=2)
        b, t, c, h, w = 1, 5, 6, 9, 9
        z = torch.rand(b, t, c, h, w)
        zn = block.norm(z.reshape(b * t, c, h, w))
        q = block.q_proj(zn).reshape(b, t, 4, h, w)
        k = block.k_proj(zn).reshape(b, t, 4, h, w)
        v = block.v_proj(zn).reshape(b, t, c, h, w)
        agg, alphas = block._attend(q, k, v, return_weights=True)
        total = torch.zeros(b, t, h, w)
        for a, alpha in enumerate(alphas):
            assert torch.all(alpha >= 0)
            total[:, a:] += alpha.sum(dim=2)
        assert torch.allclose(total, torch.ones_like(total), atol=1e-6)

        zp = torch.clone(z)
        zp[0, 3] += 0.25
        out, outp = block(z), block(zp)
        for tt in range(3):
            assert torch.equal(out[0, tt], outp[0, tt])

        flat = z.reshape(b * t, c, h, w)
        gate = torch.sigmoid(block.gate(
            torch.cat([flat, agg.reshape(b * t, c, h, w)], dim=1)))
        assert torch.all(gate > 0) and torch.all(gate < 1)

        with torch.no_grad():
            block.v_proj[-1].weight.zero_()
            block.v_proj[-1].bias.zero_()
        assert torch.equal(block(z), z)

    check(15, "attention sums to 1, strict causality, gate in (0,1), "
              "residual identity", body)


# ---------------------------------------------------------------------------
# criterion 16: gradients vs finite differences

def test_criterion_16_full_model_gradcheck():
    def body():
        torch.manual_seed(0)
        cfg = ModelConfig(input_len=2, output_len=2, spatial_blocks=1,
                          spatial_channels=4, temporal_blocks=1,
                          temporal_channels=4, downsample_factor=2,
                          embed_dim=4, spatial_radius=1)
        model = Forecaster(cfg).double()
        x = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64)
        target = torch.rand(1, 2, 1, 8, 8, dtype=torch.float64)
        loss = mse_loss(model(x), target)
        model.zero_grad()
        loss.backward()
        rng = np.random.default_rng(0)
        h = 1e-6
        for p in model.parameters():
            flat = p.detach().reshape(-1)
            grad = p.grad.reshape(-1)
            for idx in rng.choice(flat.numel(), size=min(3, flat.numel()),
                                  replace=False):
                orig = flat[idx].item()
                with torch.no_grad():
                    flat[idx] = orig + h
                    lp = mse_loss(model(x), target).item()
                    flat[idx] = orig - h
                    lm = mse_loss(model(x), target).item()
                    flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                analytic = grad[idx].item()
                assert abs(analytic - fd) <= 1e-3 * max(1.0, abs(fd), abs(analytic))

    check(16, "full-model gradients match finite differences to 1e-3", body)


# ---------------------------------------------------------------------------
# criterion 17: resolution generalization and beating persistence

def test_criterion_17_resolution_and_persistence(trained_64, tmp_path):
    root, model, truth = trained_64

    def body():
        # (a) the 64x64-trained weights run unchanged at 256x256
        with torch.no_grad():
            big = model(torch.rand(1, 10, 1, 256, 256))
        assert big.shape == (1, 90, 1, 256, 256)

        # (b) beat the persistence baseline's dataset-mean RMSE at frame 50
        # on the held-out trajectory, scored by the primary harness
        primary_cli("dataset", "--traj", root / "held" / "trajectories.msev",
                    "--out", tmp_path / "ds", "--input-len", 10,
                    "--output-len", 90, "--test-stride", 100, "--test", 1)
        inputs, targets = load_clips(tmp_path / "ds" / "test.inputs.msev",
                                     tmp_path / "ds" / "test.targets.msev")
        with torch.no_grad():
            preds = torch.stack([forecast(model, clip, 90) for clip in inputs])
        write_predictions(preds, tmp_path / "model_preds.msev")
        primary_cli("baseline", "--inputs", tmp_path / "ds" / "test.inputs.msev",
                    "--output-len", 90, "--out", tmp_path / "persist.msev")
        for name in ("model_preds", "persist"):
            primary_cli("score", "--pred", tmp_path / f"{name}.msev",
                        "--truth", tmp_path / "ds" / "test.targets.msev",
                        "--out", tmp_path / f"scores_{name}",
                        "--every", 5, "--no-grain-stats")
        series = {}
        for name in ("model_preds", "persist"):
            doc = json.loads(
                (tmp_path / f"scores_{name}" / "mean.report.json").read_text())
            series[name] = dict((k, v) for k, v in doc["rmse_series"])
        print(f"    model RMSE@50 = {series['model_preds'][50]:.4f}, "
              f"persistence RMSE@50 = {series['persist'][50]:.4f}")
        assert series["model_preds"][50] < series["persist"][50]

    check(17, "weights run at 256x256 unchanged and beat persistence at "
              "frame 50", body)


# ---------------------------------------------------------------------------
# criterion 18: end-to-end horizons through the primary harness

def test_criterion_18_horizon_tasks(trained_64, tmp_path):
    root, model, truth = trained_64

    def body():
        cases = {
            "h90": (truth[:10], 90, truth[10:100]),
            "h190": (truth[:10], 190, truth[10:200]),
            "h95_from_5": (truth[:5], 95, truth[5:100]),
        }
        rmse_190 = {}
        for name, (observed, horizon, target) in cases.items():
            with torch.no_grad():
                pred = forecast(model, observed, horizon)
            assert pred.shape == (horizon, 1, 64, 64)
            write_predictions(pred.unsqueeze(0), tmp_path / f"{name}.msev")
            msevio.write_tensor(tmp_path / f"{name}_truth.msev",
                                (1,) + tuple(target.shape),
                                target.numpy()[None])
            primary_cli("score", "--pred", tmp_path / f"{name}.msev",
                        "--truth", tmp_path / f"{name}_truth.msev",
                        "--out", tmp_path / f"scores_{name}",
                        "--every", 5, "--no-grain-stats")
            doc = json.loads(
                (tmp_path / f"scores_{name}" / "mean.report.json").read_text())
            assert len(doc["rmse_series"]) == (horizon + 4) // 5
            if name == "h190":
                rmse_190["at_90"] = _rmse(pred[89, 0], target[89, 0])
                rmse_190["at_190"] = _rmse(pred[189, 0], target[189, 0])
        print(f"    10->190 RMSE at frame 90: {rmse_190['at_90']:.4f}, "
              f"at frame 190: {rmse_190['at_190']:.4f}")
        assert rmse_190["at_190"] > rmse_190["at_90"]

    check(18, "10->90, 10->190 (two feedback rounds), 5->95 all score; "
              "error grows with horizon", body)
