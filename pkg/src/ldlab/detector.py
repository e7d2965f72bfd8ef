"""Heatmap-regression landmark detector: coordinate <-> heatmap codecs and a small hourglass."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import landmarks as lmk
from .exceptions import BadConfig, BadResolution, DegenerateMap, ShapeMismatch
from .landmarks import LandmarkSet


@dataclass
class HeatmapStack:
    maps: np.ndarray
    sigma_px: float = 1.5

    @property
    def n(self) -> int:
        return self.maps.shape[0]


def encode_heatmaps(lm: LandmarkSet, resolution, sigma_px: float = 1.5) -> HeatmapStack:
    """One unnormalized Gaussian per landmark, peak value 1 at the landmark."""
    h, w = lmk._as_hw(resolution)
    if h < 2 or w < 2:
        raise BadResolution(f"heatmap resolution must be at least 2x2, got {h}x{w}")
    if not sigma_px > 0:
        raise ValueError("sigma_px must be positive")
    px = lm.to_pixels((h, w))
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    gy = np.exp(-((ys[None, :] - px[:, 1:2]) ** 2) / (2 * sigma_px ** 2))
    gx = np.exp(-((xs[None, :] - px[:, 0:1]) ** 2) / (2 * sigma_px ** 2))
    maps = gy[:, :, None] * gx[:, None, :]
    return HeatmapStack(maps.astype(np.float32), float(sigma_px))


def _refine(lm1: float, c: float, p1: float) -> float:
    # parabola through log-values; exact for a sampled Gaussian
    a, b, d = np.log(lm1), np.log(c), np.log(p1)
    denom = a - 2 * b + d
    if not np.isfinite(denom) or denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (a - d) / denom, -0.5, 0.5))


def decode_heatmap_points(maps: np.ndarray) -> np.ndarray:
    """(N, H, W) maps -> (N, 2) pixel coordinates (x, y)."""
    maps = np.asarray(maps, dtype=np.float64)
    n, h, w = maps.shape
    out = np.zeros((n, 2))
    floor = 1e-12
    for i in range(n):
        m = maps[i]
        if not np.all(np.isfinite(m)):
            raise DegenerateMap(f"heatmap {i} has non-finite values")
        if not m.max() > 0:
            raise DegenerateMap(f"heatmap {i} has no positive maximum")
        y, x = np.unravel_index(int(np.argmax(m)), m.shape)
        peak = m[y, x]
        q = np.maximum(m, floor * peak)
        dx = _refine(q[y, x - 1], q[y, x], q[y, x + 1]) if 0 < x < w - 1 else 0.0
        dy = _refine(q[y - 1, x], q[y, x], q[y + 1, x]) if 0 < y < h - 1 else 0.0
        out[i] = (x + dx, y + dy)
    return out


def decode_heatmaps(hm: HeatmapStack) -> LandmarkSet:
    """Argmax plus quadratic sub-pixel refinement, back to normalized coordinates."""
    maps = hm.maps if isinstance(hm, HeatmapStack) else np.asarray(hm)
    n, h, w = maps.shape
    pts = decode_heatmap_points(maps) / np.array([w, h], dtype=np.float64)
    return lmk.validate(np.clip(pts, 0.0, 1.0), n=n)


def detector_loss(pred, target):
    """Mean squared error over every heatmap value."""
    p = pred.maps if isinstance(pred, HeatmapStack) else pred
    t = target.maps if isinstance(target, HeatmapStack) else target
    if tuple(p.shape) != tuple(t.shape):
        raise ShapeMismatch(f"heatmap stacks differ in shape: {tuple(p.shape)} vs {tuple(t.shape)}")
    d = p - t
    return (d * d).mean()


# ---------------------------------------------------------------------- model


@dataclass(frozen=True)
class DetectorConfig:
    n_landmarks: int = 68
    input_size: int = 64
    heatmap_stride: int = 4
    base_width: int = 32
    hourglass_depth: int = 2
    sigma_px: float = 1.5

    def __post_init__(self):
        if self.heatmap_stride not in (1, 2, 4):
            raise BadConfig("heatmap_stride must be 1, 2 or 4")
        if self.input_size % self.heatmap_stride:
            raise BadConfig("input_size must be divisible by heatmap_stride")
        if (self.input_size // self.heatmap_stride) % (2 ** self.hourglass_depth):
            raise BadConfig("heatmap size must be divisible by 2**hourglass_depth")
        if min(self.n_landmarks, self.base_width, self.hourglass_depth) <= 0 or self.sigma_px <= 0:
            raise BadConfig("detector sizes must be positive")

    @property
    def heatmap_size(self) -> int:
        return self.input_size // self.heatmap_stride

    def to_dict(self) -> dict:
        return asdict(self)


def _block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.GroupNorm(min(8, cout), cout), nn.SiLU(),
        nn.Conv2d(cout, cout, 3, padding=1), nn.GroupNorm(min(8, cout), cout), nn.SiLU(),
    )


class Hourglass(nn.Module):
    def __init__(self, depth: int, ch: int):
        super().__init__()
        self.skip = _block(ch, ch)
        self.down = _block(ch, ch)
        self.inner = Hourglass(depth - 1, ch) if depth > 1 else _block(ch, ch)
        self.up = _block(ch, ch)

    def forward(self, x):
        s = self.skip(x)
        h = self.down(F.max_pool2d(x, 2))
        h = self.up(self.inner(h))
        return s + F.interpolate(h, scale_factor=2, mode="nearest")


class HourglassDetector(nn.Module):
    """Stem down to heatmap resolution, one hourglass, 1x1 heatmap head."""

    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        stem = [nn.Conv2d(3, w, 3, padding=1), nn.SiLU()]
        for _ in range(int(np.log2(cfg.heatmap_stride))):
            stem += [nn.Conv2d(w, w, 3, stride=2, padding=1), nn.SiLU()]
        self.stem = nn.Sequential(*stem, _block(w, w))
        self.hourglass = Hourglass(cfg.hourglass_depth, w)
        self.head = nn.Sequential(_block(w, w), nn.Conv2d(w, cfg.n_landmarks, 1))

    def forward(self, x):
        return self.head(self.hourglass(self.stem(x)))


def init_detector(cfg: DetectorConfig, rng_seed: int = 0) -> HourglassDetector:
    torch.manual_seed(int(rng_seed))
    return HourglassDetector(cfg)


def images_to_input(images) -> torch.Tensor:
    x = np.asarray(images)
    if x.dtype == np.uint8:
        x = x.astype(np.float32) / 255.0
    t = torch.as_tensor(np.asarray(x, dtype=np.float32))
    if t.dim() == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2) * 2.0 - 1.0


def predict(model: HourglassDetector, image):
    """Heatmaps for one (H, W, 3) image or a batch; returns HeatmapStack or a list of them."""
    cfg = model.cfg
    x = images_to_input(image)
    if tuple(x.shape[1:]) != (3, cfg.input_size, cfg.input_size):
        raise ShapeMismatch(f"detector expects {cfg.input_size}x{cfg.input_size} RGB, got {tuple(x.shape[1:])}")
    with torch.no_grad():
        maps = model(x).numpy()
    stacks = [HeatmapStack(m, cfg.sigma_px) for m in maps]
    return stacks[0] if np.asarray(image).ndim == 3 else stacks


def predict_landmarks(model: HourglassDetector, images, batch_size: int = 64) -> list[LandmarkSet]:
    images = np.asarray(images)
    out = []
    for i in range(0, len(images), batch_size):
        for hm in predict(model, images[i:i + batch_size]):
            maps = hm.maps.astype(np.float64)
            # a map without a positive peak is lifted so its argmax still decodes
            peak = maps.reshape(len(maps), -1).max(axis=1)[:, None, None]
            maps = np.where(peak > 0, maps, maps - peak + 1e-6)
            out.append(decode_heatmaps(HeatmapStack(maps, hm.sigma_px)))
    return out


def target_batch(points: np.ndarray, cfg: DetectorConfig) -> torch.Tensor:
    """(B, N, 2) normalized points -> (B, N, Hh, Wh) Gaussian targets."""
    hs = cfg.heatmap_size
    return torch.as_tensor(np.stack([
        encode_heatmaps(LandmarkSet(p, n=len(p)), hs, cfg.sigma_px).maps for p in np.asarray(points)
    ]))
