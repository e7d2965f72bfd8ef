"""Image <-> latent autoencoder with an exact identity mode.

Images at the API boundary are channels-last floats in [0, 1]; latents are
channels-first and live in [-1, 1] in identity mode (``x -> 2x - 1``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import BadConfig, BadResolution, EmptyCorpus, ShapeMismatch


@dataclass(frozen=True)
class AutoencoderConfig:
    downsample_factor: int = 1
    latent_channels: int = 3
    base_width: int = 32
    image_channels: int = 3

    def __post_init__(self):
        if self.downsample_factor not in (1, 2, 4):
            raise BadConfig(f"downsample_factor must be 1, 2 or 4, got {self.downsample_factor}")
        if self.downsample_factor == 1 and self.latent_channels != self.image_channels:
            raise BadConfig("identity mode requires latent_channels == image_channels")
        if min(self.latent_channels, self.base_width, self.image_channels) <= 0:
            raise BadConfig("autoencoder widths must be positive")

    @property
    def identity(self) -> bool:
        return self.downsample_factor == 1

    def to_dict(self) -> dict:
        return asdict(self)


class ConvAutoencoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.identity:
            return
        w = cfg.base_width
        n = int(math.log2(cfg.downsample_factor))
        enc = [nn.Conv2d(cfg.image_channels, w, 3, padding=1), nn.SiLU()]
        for _ in range(n):
            enc += [nn.Conv2d(w, w, 4, stride=2, padding=1), nn.SiLU(), nn.Conv2d(w, w, 3, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(w, cfg.latent_channels, 3, padding=1)]
        dec = [nn.Conv2d(cfg.latent_channels, w, 3, padding=1), nn.SiLU()]
        for _ in range(n):
            dec += [nn.ConvTranspose2d(w, w, 4, stride=2, padding=1), nn.SiLU(), nn.Conv2d(w, w, 3, padding=1), nn.SiLU()]
        dec += [nn.Conv2d(w, cfg.image_channels, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)

    def encode(self, x):
        """(B, C, H, W) in [-1, 1] -> latents."""
        return x if self.cfg.identity else self.encoder(x)

    def decode(self, z):
        """Latents -> (B, C, H, W) in [-1, 1] (unclamped)."""
        return z if self.cfg.identity else self.decoder(z)


def init_autoencoder(cfg: AutoencoderConfig, rng_seed: int = 0) -> ConvAutoencoder:
    torch.manual_seed(int(rng_seed))
    return ConvAutoencoder(cfg)


def images_to_tensor(images) -> torch.Tensor:
    """(H, W, C) or (B, H, W, C) in [0, 1] (or uint8) -> (B, C, H, W) in [-1, 1]."""
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    x = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if x.dim() == 3:
        x = x[None]
    return x.permute(0, 3, 1, 2) * 2.0 - 1.0


def tensor_to_images(x: torch.Tensor) -> np.ndarray:
    """(B, C, H, W) in [-1, 1] -> (B, H, W, C) float32 in [0, 1], clamped."""
    return ((x.detach().clamp(-1.0, 1.0) + 1.0) / 2.0).permute(0, 2, 3, 1).numpy().astype(np.float32)


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(images) * 255.0), 0, 255).astype(np.uint8)


def encode(model: ConvAutoencoder, image) -> np.ndarray:
    """Image(s) in [0, 1] -> latent(s) of shape (latent_channels, H/f, W/f)."""
    x = np.asarray(image)
    single = x.ndim == 3
    h, w = x.shape[-3:-1]
    f = model.cfg.downsample_factor
    if h % f or w % f:
        raise BadResolution(f"resolution {h}x{w} not divisible by downsample factor {f}")
    with torch.no_grad():
        z = model.encode(images_to_tensor(x)).numpy()
    return z[0] if single else z


def decode(model: ConvAutoencoder, z) -> np.ndarray:
    """Latent(s) -> image(s) in [0, 1], channels-last."""
    z = torch.as_tensor(np.asarray(z, dtype=np.float32))
    single = z.dim() == 3
    if single:
        z = z[None]
    if z.shape[1] != model.cfg.latent_channels:
        raise ShapeMismatch(f"latent has {z.shape[1]} channels, model expects {model.cfg.latent_channels}")
    with torch.no_grad():
        img = tensor_to_images(model.decode(z))
    return img[0] if single else img


def reconstruction_loss(model: ConvAutoencoder, x: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(model.decode(model.encode(x)), x)


def train_autoencoder(corpus, cfg: AutoencoderConfig, rng_seed: int = 0, steps: int = 2000,
                      batch_size: int = 16, lr: float = 1e-3, log=None):
    """Fit the autoencoder on an image array by plain L2 reconstruction.

    ``corpus`` is (N, H, W, 3) uint8 or float in [0, 1]. Returns
    ``(model, losses)``; ``log(step, loss)`` is called once per step.
    """
    images = np.asarray(corpus)
    if images.ndim != 4 or len(images) == 0:
        raise EmptyCorpus("autoencoder training needs a non-empty (N, H, W, C) image array")
    model = init_autoencoder(cfg, rng_seed)
    losses = []
    if cfg.identity or steps <= 0:
        return model, losses
    data = images_to_tensor(images)
    gen = torch.Generator().manual_seed(int(rng_seed) + 1)
    opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))
    for step in range(steps):
        idx = torch.randint(0, len(data), (min(batch_size, len(data)),), generator=gen)
        loss = reconstruction_loss(model, data[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log is not None:
            log(step, losses[-1])
    return model, losses


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10.0 * math.log10(1.0 / mse)
