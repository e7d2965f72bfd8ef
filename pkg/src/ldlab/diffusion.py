"""Closed-form diffusion math: schedules, forward noising, DDPM/DDIM steps, CFG.

Timesteps are 1-indexed (``1..T``). ``alpha_bar(0)`` is defined as 1 so that
a DDIM step to ``t_prev=0`` lands on the clean estimate.

The step functions only use scalar arithmetic on their array arguments, so
they accept numpy arrays and torch tensors alike.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BadRange, BadTimestepPair, ShapeMismatch, TimestepOutOfRange


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    kind: str = "linear"

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t - 1])

    def _check(self, t):
        if not 1 <= int(t) <= self.T:
            raise TimestepOutOfRange(f"timestep {t} outside 1..{self.T}")

    def to_dict(self) -> dict:
        return {"T": self.T, "kind": self.kind, "beta_start": float(self.betas[0]), "beta_end": float(self.betas[-1])}


def build_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02, kind: str = "linear") -> NoiseSchedule:
    """Linear (inclusive endpoints) or cosine noise schedule over ``T`` steps.

    For the cosine kind ``beta_start``/``beta_end`` only bound the betas
    (clip range), the shape follows the usual squared-cosine alpha_bar.
    """
    T = int(T)
    if T < 1:
        raise BadRange(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise BadRange(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64) if T > 1 else np.array([beta_start], dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        f = np.cos((np.arange(T + 1) / T + s) / (1 + s) * math.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], beta_start, beta_end)
    else:
        raise BadRange(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for a in (betas, alphas, alpha_bars):
        a.setflags(write=False)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars, kind=kind)


def _same_shape(a, b, what="arrays"):
    if tuple(np.shape(a)) != tuple(np.shape(b)):
        raise ShapeMismatch(f"{what} differ in shape: {tuple(np.shape(a))} vs {tuple(np.shape(b))}")


def forward_step(z_prev, t: int, noise, sched: NoiseSchedule):
    """One Markov noising step: sqrt(1 - beta_t) * z_prev + sqrt(beta_t) * noise."""
    _same_shape(z_prev, noise, "z_prev and noise")
    b = sched.beta(t)
    return math.sqrt(1.0 - b) * z_prev + math.sqrt(b) * noise


def forward_sample(z0, t: int, eps, sched: NoiseSchedule):
    """Jump straight to step ``t``: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    _same_shape(z0, eps, "z0 and eps")
    ab = sched.alpha_bar(t)
    sched._check(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def forward_sample_batch(z0, t, eps, sched: NoiseSchedule):
    """Batched ``forward_sample`` with one timestep per leading-axis item (torch tensors)."""
    import torch

    _same_shape(z0, eps, "z0 and eps")
    t = torch.as_tensor(t, dtype=torch.int64)
    if (t < 1).any() or (t > sched.T).any():
        raise TimestepOutOfRange(f"timesteps must lie in 1..{sched.T}")
    ab = torch.tensor(np.array(sched.alpha_bars), dtype=z0.dtype)[t - 1].reshape(-1, *([1] * (z0.dim() - 1)))
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


def training_loss(eps_pred, eps):
    """Mean squared error over all elements."""
    _same_shape(eps_pred, eps, "eps_pred and eps")
    d = eps_pred - eps
    return (d * d).mean()


def predict_x0(z_t, eps_pred, t: int, sched: NoiseSchedule):
    ab = sched.alpha_bar(t)
    return (z_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)


def ddpm_reverse_step(z_t, eps_pred, t: int, sched: NoiseSchedule, noise=None):
    """Ancestral step with sigma_t^2 = beta_t (sigma_1 = 0)."""
    _same_shape(z_t, eps_pred, "z_t and eps_pred")
    b, a, ab = sched.beta(t), sched.alpha(t), sched.alpha_bar(t)
    mean = (z_t - (b / math.sqrt(1.0 - ab)) * eps_pred) / math.sqrt(a)
    if noise is None or t == 1:
        return mean
    _same_shape(z_t, noise, "z_t and noise")
    return mean + math.sqrt(b) * noise


def _clip(x, lo: float, hi: float):
    return x.clamp(lo, hi) if hasattr(x, "clamp") else np.clip(x, lo, hi)


def ddim_step(z_t, eps_pred, t: int, t_prev: int, sched: NoiseSchedule, clip_x0=None):
    """Deterministic DDIM update from ``t`` to ``t_prev``.

    ``clip_x0=(lo, hi)`` clamps the predicted clean sample to the data range
    and re-derives the noise direction from the clamped value.
    """
    if not (0 <= t_prev < t <= sched.T):
        raise BadTimestepPair(f"need 0 <= t_prev < t <= {sched.T}, got t={t}, t_prev={t_prev}")
    _same_shape(z_t, eps_pred, "z_t and eps_pred")
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t_prev)
    x0 = predict_x0(z_t, eps_pred, t, sched)
    if clip_x0 is not None:
        x0 = _clip(x0, *clip_x0)
        eps_pred = (z_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_pred


def cfg_combine(eps_cond, eps_uncond, w: float):
    """Classifier-free guidance: eps_uncond + w * (eps_cond - eps_uncond)."""
    _same_shape(eps_cond, eps_uncond, "eps_cond and eps_uncond")
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending, de-duplicated timesteps from T down to 1 (``steps`` of them at most)."""
    steps = max(1, min(int(steps), int(T)))
    ts = np.unique(np.rint(np.linspace(1, T, steps)).astype(int))[::-1]
    return [int(t) for t in ts]


def ddim_sample(predict_eps, z_T, sched: NoiseSchedule, steps: int = 50, clip_x0=None):
    """Run a full DDIM chain from ``z_T``; ``predict_eps(z, t)`` returns the noise estimate."""
    ts = ddim_timesteps(sched.T, steps)
    z = z_T
    for t, t_prev in zip(ts, ts[1:] + [0]):
        z = ddim_step(z, predict_eps(z, t), t, t_prev, sched, clip_x0)
    return z


def ddpm_sample(predict_eps, z_T, sched: NoiseSchedule, noise_fn=None):
    """Full ancestral chain; ``noise_fn(t)`` supplies per-step noise (None -> deterministic mean path)."""
    z = z_T
    for t in range(sched.T, 0, -1):
        noise = noise_fn(t) if noise_fn is not None else None
        z = ddpm_reverse_step(z, predict_eps(z, t), t, sched, noise)
    return z
