"""Conditional noise predictor: small U-Net + zero-initialized control branch.

The landmark condition image enters through a separate convolutional
encoder whose per-level features are added to the backbone's encoder
features through 1x1 projections initialized to exactly zero, so a fresh
model ignores the condition image bit for bit. The text prompt is replaced
by a style token whose embedding is summed with the timestep embedding;
token 0 is the empty prompt and starts as an all-zero row.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import BadConfig, ShapeMismatch

NULL_STYLE = 0


@dataclass(frozen=True)
class DenoiserConfig:
    latent_channels: int = 3
    latent_size: int = 64
    base_width: int = 16
    depth: int = 3
    timestep_embedding_dim: int = 64
    style_vocab_size: int = 26
    condition_channels: int = 3
    condition_factor: int = 1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise BadConfig(f"DenoiserConfig.{k} must be a positive integer, got {v!r}")
        if self.latent_size % (2 ** self.depth):
            raise BadConfig(f"latent_size {self.latent_size} not divisible by 2**depth")
        if self.condition_factor & (self.condition_factor - 1):
            raise BadConfig("condition_factor must be a power of two")

    def widths(self) -> list[int]:
        return [self.base_width * min(2 ** i, 4) for i in range(self.depth + 1)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise BadConfig(f"unknown DenoiserConfig keys {sorted(unknown)}")
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _groups(ch: int) -> int:
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        # scale-shift after the norm, so the conditioning is not normalised away
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class ControlEncoder(nn.Module):
    """Condition image -> one feature map per backbone encoder level."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        w = cfg.widths()
        stem = [nn.Conv2d(cfg.condition_channels, w[0], 3, padding=1), nn.SiLU()]
        for _ in range(int(math.log2(cfg.condition_factor))):
            stem += [nn.Conv2d(w[0], w[0], 3, stride=2, padding=1), nn.SiLU()]
        stem += [nn.Conv2d(w[0], w[0], 3, padding=1), nn.SiLU()]
        self.stem = nn.Sequential(*stem)
        self.down = nn.ModuleList(
            nn.Sequential(nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1), nn.SiLU())
            for i in range(cfg.depth)
        )
        self.zero_proj = nn.ModuleList(nn.Conv2d(w[i], w[i], 1) for i in range(cfg.depth + 1))
        for proj in self.zero_proj:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def forward(self, cond):
        feats = []
        h = self.stem(cond)
        feats.append(self.zero_proj[0](h))
        for i, down in enumerate(self.down):
            h = down(h)
            feats.append(self.zero_proj[i + 1](h))
        return feats


class ConditionalDenoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths()
        e = cfg.timestep_embedding_dim
        self.time_mlp = nn.Sequential(nn.Linear(e, e), nn.SiLU(), nn.Linear(e, e))
        self.style_embedding = nn.Embedding(cfg.style_vocab_size, e)
        self.in_conv = nn.Conv2d(cfg.latent_channels, w[0], 3, padding=1)
        self.enc = nn.ModuleList(ResBlock(w[i], w[i], e) for i in range(cfg.depth))
        self.downs = nn.ModuleList(nn.Conv2d(w[i], w[i + 1], 3, stride=2, padding=1) for i in range(cfg.depth))
        self.mid = ResBlock(w[-1], w[-1], e)
        self.ups = nn.ModuleList(nn.Conv2d(w[i + 1], w[i], 3, padding=1) for i in range(cfg.depth))
        self.dec = nn.ModuleList(ResBlock(2 * w[i], w[i], e) for i in range(cfg.depth))
        self.out_norm = nn.GroupNorm(_groups(w[0]), w[0])
        self.out_conv = nn.Conv2d(w[0], cfg.latent_channels, 3, padding=1)
        self.control = ControlEncoder(cfg)

    def reset_parameters(self, generator: torch.Generator):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                with torch.no_grad():
                    m.weight.uniform_(-bound, bound, generator=generator)
                    m.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(m, nn.GroupNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        with torch.no_grad():
            self.style_embedding.weight.normal_(0.0, 1.0, generator=generator)
            self.style_embedding.weight[NULL_STYLE].zero_()
        for proj in self.control.zero_proj:
            nn.init.zeros_(proj.weight)
            nn.init.zeros_(proj.bias)

    def forward(self, z, t, cond_image, style_id):
        emb = self.time_mlp(timestep_embedding(t, self.cfg.timestep_embedding_dim).to(z.dtype))
        emb = emb + self.style_embedding(style_id)
        ctrl = self.control(cond_image)
        h = self.in_conv(z) + ctrl[0]
        skips = []
        for i in range(self.cfg.depth):
            h = self.enc[i](h, emb)
            skips.append(h)
            h = self.downs[i](h) + ctrl[i + 1]
        h = self.mid(h, emb)
        for i in reversed(range(self.cfg.depth)):
            h = self.ups[i](F.interpolate(h, scale_factor=2, mode="nearest"))
            h = self.dec[i](torch.cat([h, skips[i]], dim=1), emb)
        return self.out_conv(F.silu(self.out_norm(h)))


def init_denoiser(cfg: DenoiserConfig, rng_seed: int = 0) -> ConditionalDenoiser:
    if not isinstance(cfg, DenoiserConfig):
        raise BadConfig("init_denoiser expects a DenoiserConfig")
    model = ConditionalDenoiser(cfg)
    gen = torch.Generator().manual_seed(int(rng_seed))
    model.reset_parameters(gen)
    return model


def _as_batch(x, dtype):
    x = torch.as_tensor(np.asarray(x) if not isinstance(x, torch.Tensor) else x, dtype=dtype)
    return x, x.dim() == 3


def predict_noise(model: ConditionalDenoiser, z_t, t, cond_image, style_id):
    """Noise estimate with the same shape as ``z_t``.

    ``z_t`` is (C, H, W) or (B, C, H, W); ``cond_image`` is (H, W, 3) or
    (B, H, W, 3) with values in [0, 1] (channels-last, as rasterized).
    Numpy in, numpy out; torch in, torch out.
    """
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    was_numpy = not isinstance(z_t, torch.Tensor)
    z, single = _as_batch(z_t, dtype)
    if single:
        z = z[None]
    c = torch.as_tensor(np.asarray(cond_image) if not isinstance(cond_image, torch.Tensor) else cond_image, dtype=dtype)
    if c.dim() == 3:
        c = c[None]
    c = c.permute(0, 3, 1, 2)
    B = z.shape[0]
    exp_lat = (cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    if tuple(z.shape[1:]) != exp_lat:
        raise ShapeMismatch(f"latent shape {tuple(z.shape[1:])} != expected {exp_lat}")
    exp_cond = (cfg.condition_channels, cfg.latent_size * cfg.condition_factor, cfg.latent_size * cfg.condition_factor)
    if tuple(c.shape[1:]) != exp_cond or c.shape[0] not in (1, B):
        raise ShapeMismatch(f"condition shape {tuple(c.shape)} incompatible with {exp_cond} x batch {B}")
    if c.shape[0] != B:
        c = c.expand(B, -1, -1, -1)
    tt = torch.as_tensor(t, dtype=torch.int64).reshape(-1).expand(B) if np.ndim(t) == 0 else torch.as_tensor(t, dtype=torch.int64)
    ss = torch.as_tensor(style_id, dtype=torch.int64).reshape(-1)
    if ss.numel() == 1:
        ss = ss.expand(B)
    if ((ss < 0) | (ss >= cfg.style_vocab_size)).any():
        raise ShapeMismatch(f"style ids must be in [0, {cfg.style_vocab_size})")
    out = model(z, tt, c, ss)
    if single:
        out = out[0]
    return out.detach().numpy() if was_numpy else out


def count_parameters(model: nn.Module) -> int:
    return int(sum(p.numel() for p in model.parameters()))
