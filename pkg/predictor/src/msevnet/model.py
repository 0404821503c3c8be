"""Fully convolutional spatiotemporal forecaster.

A spatial encoder (per-frame shared weights, depthwise + pointwise
convolutions, stride-2 downsampling) feeds a temporal translator built
from gated spatiotemporal attention (gSTA) blocks, and a spatial decoder
upsamples back and maps the stacked latent history onto the full output
horizon in a single forward pass.

Each gSTA block forms Q/K/V with depthwise, dilated-depthwise, and 1x1
convolutions, attends over a causal local neighborhood

    N(t, p) = {(s, q) : t - r_t <= s <= t, |q - p|_inf <= r_s}

with softmax weights <Q_tp, K_sq>/sqrt(d), and applies a learned sigmoid
gate to the residual update Z' = Z + G * V_agg. Everything is built from
convolutions whose weights never depend on H or W, so a trained model
runs at any resolution divisible by the downsample factor.
"""

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ModelConfig:
    input_len: int = 10
    output_len: int = 90
    spatial_blocks: int = 4
    spatial_channels: int = 64
    temporal_blocks: int = 8
    temporal_channels: int = 256
    downsample_factor: int = 4
    embed_dim: int = 64
    temporal_radius: int = None
    spatial_radius: int = 3

    def __post_init__(self):
        if self.temporal_radius is None:
            self.temporal_radius = self.input_len - 1
        for name in ("input_len", "output_len", "spatial_blocks",
                     "spatial_channels", "temporal_blocks", "temporal_channels",
                     "embed_dim", "spatial_radius"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.temporal_radius < 0:
            raise ValueError("temporal_radius must be >= 0")
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ValueError("downsample_factor must be a power of two")
        if 2 ** (self.spatial_blocks) < f:
            raise ValueError("not enough spatial blocks for the downsample factor")
        if self.embed_dim > self.temporal_channels:
            raise ValueError("embed_dim must not exceed temporal_channels")

    def to_dict(self):
        return asdict(self)


class SpatialBlock(nn.Module):
    """Depthwise spatial filtering, pointwise channel mixing, norm, GELU."""

    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.depthwise = nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1,
                                   groups=c_in)
        self.pointwise = nn.Conv2d(c_in, c_out, 1)
        self.norm = nn.GroupNorm(c_out, c_out)
        self.residual = stride == 1 and c_in == c_out

    def forward(self, x):
        y = F.gelu(self.norm(self.pointwise(self.depthwise(x))))
        return x + y if self.residual else y


class Encoder(nn.Module):
    """Per-frame spatial feature extractor with shared weights."""

    def __init__(self, cfg):
        super().__init__()
        c = cfg.spatial_channels
        n_stride = int(math.log2(cfg.downsample_factor))
        self.stem = nn.Conv2d(1, c, 3, padding=1)
        blocks = []
        for i in range(cfg.spatial_blocks):
            blocks.append(SpatialBlock(c, c, stride=2 if i < n_stride else 1))
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):
        b, t, _, h, w = x.shape
        y = self.blocks(self.stem(x.reshape(b * t, 1, h, w)))
        return y.reshape(b, t, *y.shape[1:])


def _qkv_branch(c_in, c_out):
    # local depthwise filter, dilated depthwise filter to widen the
    # receptive field, then 1x1 channel mixing
    return nn.Sequential(
        nn.Conv2d(c_in, c_in, 3, padding=1, groups=c_in),
        nn.Conv2d(c_in, c_in, 3, padding=2, dilation=2, groups=c_in),
        nn.Conv2d(c_in, c_out, 1),
    )


class GSTABlock(nn.Module):
    """Gated spatiotemporal attention over a causal local neighborhood."""

    def __init__(self, channels, embed_dim, temporal_radius, spatial_radius):
        super().__init__()
        self.channels = channels
        self.embed_dim = embed_dim
        self.r_t = temporal_radius
        self.r_s = spatial_radius
        self.norm = nn.GroupNorm(channels, channels)
        self.q_proj = _qkv_branch(channels, embed_dim)
        self.k_proj = _qkv_branch(channels, embed_dim)
        self.v_proj = _qkv_branch(channels, channels)
        self.gate = nn.Conv2d(2 * channels, channels, 1)

    def _attend(self, q, k, v, return_weights=False):
        """Causal, spatially local softmax aggregation of v.

        Online softmax over temporal offsets: neighbors at spatial offsets
        come from unfolding, so each temporal offset costs two einsums.
        """
        b, t, d, h, w = q.shape
        cv = v.shape[2]
        span = 2 * self.r_s + 1
        n_off = span * span
        k_unf = F.unfold(k.reshape(b * t, d, h, w), span, padding=self.r_s)
        k_unf = k_unf.reshape(b, t, d, n_off, h, w)
        v_unf = F.unfold(v.reshape(b * t, cv, h, w), span, padding=self.r_s)
        v_unf = v_unf.reshape(b, t, cv, n_off, h, w)
        valid = F.unfold(torch.ones(1, 1, h, w, dtype=q.dtype, device=q.device),
                         span, padding=self.r_s)
        valid = valid.reshape(1, 1, n_off, h, w) > 0.5
        scale = 1.0 / math.sqrt(self.embed_dim)

        max_back = min(self.r_t, t - 1)
        scores = []
        running_max = torch.full((b, t, h, w), -torch.inf,
                                 dtype=q.dtype, device=q.device)
        for a in range(max_back + 1):
            s_a = torch.einsum("bqdhw,bqdkhw->bqkhw",
                               q[:, a:], k_unf[:, :t - a]) * scale
            s_a = s_a.masked_fill(~valid, -torch.inf)
            scores.append(s_a)
            # the softmax value is invariant to the shift, so keep it out
            # of the autograd graph
            running_max[:, a:] = torch.maximum(running_max[:, a:],
                                               s_a.detach().amax(dim=2))
        denom = torch.zeros(b, t, 1, h, w, dtype=q.dtype, device=q.device)
        numer = torch.zeros(b, t, cv, h, w, dtype=q.dtype, device=q.device)
        weights = [] if return_weights else None
        for a, s_a in enumerate(scores):
            w_a = torch.exp(s_a - running_max[:, a:].unsqueeze(2))
            denom[:, a:] += w_a.sum(dim=2, keepdim=True)
            numer[:, a:] += torch.einsum("bqkhw,bqckhw->bqchw",
                                         w_a, v_unf[:, :t - a])
            if return_weights:
                weights.append(w_a)
        agg = numer / denom
        if return_weights:
            alphas = [w_a / denom[:, a:, 0].unsqueeze(2)
                      for a, w_a in enumerate(weights)]
            return agg, alphas
        return agg

    def forward(self, z):
        b, t, c, h, w = z.shape
        flat = z.reshape(b * t, c, h, w)
        zn = self.norm(flat)
        q = self.q_proj(zn).reshape(b, t, self.embed_dim, h, w)
        k = self.k_proj(zn).reshape(b, t, self.embed_dim, h, w)
        v = self.v_proj(zn).reshape(b, t, c, h, w)
        agg = self._attend(q, k, v)
        gate_in = torch.cat([flat, agg.reshape(b * t, c, h, w)], dim=1)
        gate = torch.sigmoid(self.gate(gate_in))
        out = flat + gate * agg.reshape(b * t, c, h, w)
        return out.reshape(b, t, c, h, w)


class Translator(nn.Module):
    """Stack of gSTA blocks between pointwise channel projections."""

    def __init__(self, cfg):
        super().__init__()
        cs, ct = cfg.spatial_channels, cfg.temporal_channels
        self.enter = nn.Conv2d(cs, ct, 1)
        self.blocks = nn.ModuleList(
            GSTABlock(ct, cfg.embed_dim, cfg.temporal_radius, cfg.spatial_radius)
            for _ in range(cfg.temporal_blocks)
        )
        self.leave = nn.Conv2d(ct, cs, 1)

    def forward(self, z):
        b, t, c, h, w = z.shape
        y = self.enter(z.reshape(b * t, c, h, w)).reshape(b, t, -1, h, w)
        for block in self.blocks:
            y = block(y)
        y = self.leave(y.reshape(b * t, -1, h, w))
        return y.reshape(b, t, -1, h, w)


class Decoder(nn.Module):
    """Upsample the stacked latent history and emit the output horizon.

    Upsampling is sub-pixel (pointwise expansion + pixel shuffle), which
    restores fine interface detail far better than interpolation while
    staying resolution-agnostic.
    """

    def __init__(self, cfg):
        super().__init__()
        c = cfg.spatial_channels
        n_up = int(math.log2(cfg.downsample_factor))
        self.merge = nn.Conv2d(cfg.input_len * c, c, 1)
        stages = []
        for i in range(cfg.spatial_blocks):
            stages.append(SpatialBlock(c, c))
            if i < n_up:
                stages.append(nn.Conv2d(c, 4 * c, 1))
                stages.append(nn.PixelShuffle(2))
        self.stages = nn.Sequential(*stages)
        self.head = nn.Conv2d(c, cfg.output_len, 1)

    def forward(self, z):
        b, t, c, h, w = z.shape
        y = self.merge(z.reshape(b, t * c, h, w))
        y = self.stages(y)
        y = self.head(y)
        return y.unsqueeze(2)  # (B, T', 1, H, W)


class Forecaster(nn.Module):
    """input_len observed frames in, output_len predicted frames out."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.translator = Translator(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, x):
        b, t, c, h, w = x.shape
        f = self.cfg.downsample_factor
        if t != self.cfg.input_len:
            raise ValueError(f"expected {self.cfg.input_len} input frames, got {t}")
        if h % f or w % f:
            raise ValueError(f"H and W must be divisible by {f}")
        z = self.encoder(x)
        z = self.translator(z)
        return self.decoder(z)


def mse_loss(pred, target):
    """(1/T') sum_t ||pred_t - target_t||_2^2, batch-averaged.

    The per-frame norm sums over pixels, so a constant offset d scores
    d^2 * H * W.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    per_frame = diff.pow(2).flatten(2).sum(dim=2)  # (B, T')
    return per_frame.mean(dim=1).mean()
