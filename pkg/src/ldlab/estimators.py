"""scikit-learn style estimators around the trainable models.

Each estimator follows the usual contract: hyper-parameters are constructor
arguments (so ``get_params``/``set_params``/``clone`` work), learned state
lives in trailing-underscore attributes set by ``fit``, and ``warm_start``
continues from the current weights instead of re-initializing. That is how
stage-2 training and detector fine-tuning are expressed.
"""
from __future__ import annotations

import copy
import time

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autoencoder as ae
from . import detector as det
from . import diffusion as D
from . import landmarks as lmk
from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import DenoiserConfig, NULL_STYLE, init_denoiser
from .evaluation import nme
from .exceptions import CheckpointMismatch, EmptyCorpus
from .landmarks import LandmarkSet, RasterSpec
from .validation import check_images, check_landmark_array, check_styles


def _split_state(state: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}


def _prefixed(module: torch.nn.Module, prefix: str) -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def _log_row(step, loss, lr, t0):
    return {"step": int(step), "loss": float(loss), "lr": float(lr), "wall_ms": int((time.perf_counter() - t0) * 1000)}


# ----------------------------------------------------------------- autoencoder


class LatentAutoencoder(TransformerMixin, BaseEstimator):
    """Images (N, H, W, 3) in [0, 1] <-> latents (N, C, H/f, W/f)."""

    def __init__(self, downsample_factor=1, latent_channels=3, base_width=32, steps=2000,
                 batch_size=16, learning_rate=1e-3, random_state=0):
        self.downsample_factor = downsample_factor
        self.latent_channels = latent_channels
        self.base_width = base_width
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _config(self):
        return ae.AutoencoderConfig(self.downsample_factor, self.latent_channels, self.base_width)

    def fit(self, X, y=None, callback=None):
        X = check_images(X)
        t0 = time.perf_counter()
        self.log_ = []

        def log(step, loss):
            row = _log_row(step, loss, self.learning_rate, t0)
            self.log_.append(row)
            if callback is not None:
                callback(row)

        self.model_, self.loss_curve_ = ae.train_autoencoder(
            X, self._config(), self.random_state, self.steps, self.batch_size, self.learning_rate, log
        )
        self.model_.eval()
        self.image_size_ = int(X.shape[1])
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return ae.encode(self.model_, check_images(X))

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return ae.decode(self.model_, Z)

    def save(self, path, metadata=None):
        check_is_fitted(self, "model_")
        cfg = {"params": self.get_params(), "image_size": self.image_size_}
        save_checkpoint(path, "autoencoder", cfg, self.model_.state_dict(), metadata)

    @classmethod
    def load(cls, path):
        header, state = load_checkpoint(path, "autoencoder")
        return cls._from_parts(header["config"], state), header

    @classmethod
    def _from_parts(cls, cfg, state):
        est = cls(**cfg["params"])
        est.model_ = ae.init_autoencoder(est._config(), est.random_state)
        est.model_.load_state_dict(state)
        est.model_.eval()
        est.image_size_ = int(cfg["image_size"])
        est.loss_curve_ = []
        return est


def identity_autoencoder(image_size: int = 64) -> LatentAutoencoder:
    return LatentAutoencoder(downsample_factor=1, steps=0).fit(np.zeros((1, image_size, image_size, 3), np.float32))


# ------------------------------------------------------------------- diffusion


def sample_timesteps(n: int, T: int, generator: torch.Generator) -> torch.Tensor:
    """Uniform integer timesteps in 1..T."""
    return torch.randint(1, T + 1, (n,), generator=generator)


def draw_style_tokens(styles: torch.Tensor, drop_prob: float, generator: torch.Generator) -> torch.Tensor:
    """Replace each style id by the null token with probability ``drop_prob``."""
    if drop_prob <= 0:
        return styles.clone()
    drop = torch.rand(styles.shape, generator=generator) < drop_prob
    return torch.where(drop, torch.full_like(styles, NULL_STYLE), styles)


class ConditionalDiffusion(BaseEstimator):
    """Landmark- and style-conditioned latent diffusion model.

    ``fit(X, landmarks, styles)`` trains the noise predictor; ``styles=None``
    trains with the null (empty-prompt) token only. ``sample`` runs DDIM with
    classifier-free guidance over the style token, one image at a time so
    that every output depends only on its own seed.
    """

    def __init__(self, base_width=16, depth=3, timestep_embedding_dim=64, style_vocab_size=26,
                 T=200, beta_start=5e-4, beta_end=0.1, schedule="linear", steps=5000, batch_size=8,
                 learning_rate=1e-3, cfg_drop_prob=0.0, ema_decay=0.999, stroke_radius_px=1.0,
                 guidance_w=2.0, ddim_steps=50, random_state=0, warm_start=False):
        self.base_width = base_width
        self.depth = depth
        self.timestep_embedding_dim = timestep_embedding_dim
        self.style_vocab_size = style_vocab_size
        self.T = T
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.schedule = schedule
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.cfg_drop_prob = cfg_drop_prob
        self.ema_decay = ema_decay
        self.stroke_radius_px = stroke_radius_px
        self.guidance_w = guidance_w
        self.ddim_steps = ddim_steps
        self.random_state = random_state
        self.warm_start = warm_start

    # -- helpers
    def schedule_(self):
        return D.build_schedule(self.T, self.beta_start, self.beta_end, self.schedule)

    def raster_spec(self, image_size: int) -> RasterSpec:
        return RasterSpec(resolution=(image_size, image_size), stroke_radius_px=self.stroke_radius_px)

    def conditions(self, landmarks, image_size: int) -> np.ndarray:
        spec = self.raster_spec(image_size)
        return np.stack([lmk.rasterize(LandmarkSet(p), spec) for p in np.asarray(landmarks)])

    def _denoiser_config(self, autoencoder: LatentAutoencoder, image_size: int) -> DenoiserConfig:
        f = autoencoder.downsample_factor
        return DenoiserConfig(
            latent_channels=autoencoder.latent_channels,
            latent_size=image_size // f,
            base_width=self.base_width,
            depth=self.depth,
            timestep_embedding_dim=self.timestep_embedding_dim,
            style_vocab_size=self.style_vocab_size,
            condition_channels=3,
            condition_factor=f,
        )

    def fit(self, X, landmarks, styles=None, autoencoder=None, callback=None):
        X = check_images(X)
        if len(X) == 0:
            raise EmptyCorpus("no training images")
        landmarks = check_landmark_array(landmarks, len(X))
        styles = check_styles(styles, len(X), self.style_vocab_size)
        size = int(X.shape[1])
        if self.warm_start and hasattr(self, "model_"):
            if autoencoder is not None and autoencoder is not self.autoencoder_:
                raise CheckpointMismatch("warm-started fit must reuse the model's own autoencoder")
        else:
            self.autoencoder_ = autoencoder if autoencoder is not None else identity_autoencoder(size)
            self.config_ = self._denoiser_config(self.autoencoder_, size)
            self.model_ = init_denoiser(self.config_, self.random_state)
            self.ema_ = copy.deepcopy(self.model_)
            self.n_steps_total_ = 0
            self.image_size_ = size
        sched = self.schedule_()
        z0 = torch.as_tensor(self.autoencoder_.transform(X))
        cond = torch.as_tensor(self.conditions(landmarks, size)).permute(0, 3, 1, 2).contiguous()
        style_t = torch.as_tensor(styles)
        gen = torch.Generator().manual_seed(int(self.random_state) + 7919 * (self.n_steps_total_ + 1))
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.learning_rate, betas=(0.9, 0.999))
        self.model_.train()
        self.log_ = []
        self.n_dropped_ = 0
        self.n_examples_ = 0
        t0 = time.perf_counter()
        for step in range(self.steps):
            idx = torch.randint(0, len(z0), (self.batch_size,), generator=gen)
            t = sample_timesteps(self.batch_size, self.T, gen)
            eps = torch.randn(z0[idx].shape, generator=gen)
            tokens = draw_style_tokens(style_t[idx], self.cfg_drop_prob, gen)
            self.n_dropped_ += int(((tokens == NULL_STYLE) & (style_t[idx] != NULL_STYLE)).sum())
            self.n_examples_ += self.batch_size
            z_t = D.forward_sample_batch(z0[idx], t, eps, sched)
            loss = D.training_loss(self.model_(z_t, t, cond[idx], tokens), eps)
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                for pe, pm in zip(self.ema_.parameters(), self.model_.parameters()):
                    pe.mul_(self.ema_decay).add_(pm, alpha=1.0 - self.ema_decay)
            self.n_steps_total_ += 1
            row = _log_row(self.n_steps_total_, loss.item(), self.learning_rate, t0)
            self.log_.append(row)
            if callback is not None:
                callback(row, self)
        self.model_.eval()
        self.ema_.eval()
        return self

    def predict_noise(self, z_t, t, cond_image, style_id, use_ema=True):
        check_is_fitted(self, "model_")
        from .denoiser import predict_noise

        with torch.no_grad():
            return predict_noise(self.ema_ if use_ema else self.model_, z_t, t, cond_image, style_id)

    def sample_one(self, landmarks, style_id: int, seed: int, guidance_w=None, ddim_steps=None) -> np.ndarray:
        """Generate one uint8 image for a landmark set; deterministic in ``seed``."""
        check_is_fitted(self, "model_")
        w = self.guidance_w if guidance_w is None else guidance_w
        steps = self.ddim_steps if ddim_steps is None else ddim_steps
        pts = landmarks.points if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks)
        cond = torch.as_tensor(self.conditions(pts[None], self.image_size_)).permute(0, 3, 1, 2)
        cfg = self.config_
        g = torch.Generator().manual_seed(int(seed))
        z = torch.randn((1, cfg.latent_channels, cfg.latent_size, cfg.latent_size), generator=g)
        model = self.ema_
        guided = int(style_id) != NULL_STYLE and w != 1.0
        if guided:
            cond_in = cond.expand(2, -1, -1, -1)
            tokens = torch.tensor([int(style_id), NULL_STYLE])
        else:
            cond_in, tokens = cond, torch.tensor([int(style_id)])

        def eps_fn(zz, t):
            tt = torch.full((len(tokens),), t, dtype=torch.int64)
            e = model(zz.expand(len(tokens), -1, -1, -1), tt, cond_in, tokens)
            return D.cfg_combine(e[0:1], e[1:2], w) if guided else e

        # pixel-space latents live in [-1, 1]; learned latents are unbounded
        clip = (-1.0, 1.0) if self.autoencoder_.downsample_factor == 1 else None
        with torch.no_grad():
            z0 = D.ddim_sample(eps_fn, z, self.schedule_(), steps, clip_x0=clip)
            img = self.autoencoder_.inverse_transform(z0.numpy())
        return ae.to_uint8(img[0])

    def sample(self, landmarks, styles, seeds, guidance_w=None, ddim_steps=None) -> np.ndarray:
        landmarks = check_landmark_array(landmarks)
        styles = check_styles(styles, len(landmarks), self.style_vocab_size)
        seeds = np.broadcast_to(np.asarray(seeds, dtype=np.int64), (len(landmarks),))
        return np.stack([
            self.sample_one(p, int(s), int(sd), guidance_w, ddim_steps) for p, s, sd in zip(landmarks, styles, seeds)
        ])

    # -- persistence
    def save(self, path, metadata=None):
        check_is_fitted(self, "model_")
        state = {**_prefixed(self.model_, "model."), **_prefixed(self.ema_, "ema."),
                 **_prefixed(self.autoencoder_.model_, "ae.")}
        cfg = {
            "params": self.get_params(),
            "denoiser": self.config_.to_dict(),
            "autoencoder": {"params": self.autoencoder_.get_params(), "image_size": self.autoencoder_.image_size_},
            "image_size": self.image_size_,
            "n_steps_total": self.n_steps_total_,
        }
        save_checkpoint(path, "denoiser", cfg, state, metadata)

    @classmethod
    def load(cls, path):
        header, state = load_checkpoint(path, "denoiser")
        cfg = header["config"]
        est = cls(**cfg["params"])
        est.autoencoder_ = LatentAutoencoder._from_parts(cfg["autoencoder"], _split_state(state, "ae."))
        est.config_ = DenoiserConfig.from_dict(cfg["denoiser"])
        est.model_ = init_denoiser(est.config_, est.random_state)
        est.model_.load_state_dict(_split_state(state, "model."))
        est.ema_ = init_denoiser(est.config_, est.random_state)
        est.ema_.load_state_dict(_split_state(state, "ema."))
        est.model_.eval()
        est.ema_.eval()
        est.image_size_ = int(cfg["image_size"])
        est.n_steps_total_ = int(cfg["n_steps_total"])
        return est, header


# -------------------------------------------------------------------- detector


class LandmarkDetector(BaseEstimator):
    """Heatmap-regression detector: ``fit(images, landmarks)``, ``predict(images)``.

    ``score`` returns the negative mean NME so that larger is better.
    """

    def __init__(self, n_landmarks=68, input_size=64, heatmap_stride=4, base_width=32, hourglass_depth=2,
                 sigma_px=1.5, steps=3000, batch_size=32, learning_rate=1e-4, random_state=0, warm_start=False):
        self.n_landmarks = n_landmarks
        self.input_size = input_size
        self.heatmap_stride = heatmap_stride
        self.base_width = base_width
        self.hourglass_depth = hourglass_depth
        self.sigma_px = sigma_px
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.warm_start = warm_start

    def _config(self):
        return det.DetectorConfig(self.n_landmarks, self.input_size, self.heatmap_stride, self.base_width,
                                  self.hourglass_depth, self.sigma_px)

    def fit(self, X, y, callback=None):
        X = check_images(X, self.input_size)
        if len(X) == 0:
            raise EmptyCorpus("no training images")
        y = check_landmark_array(y, len(X), self.n_landmarks)
        if not (self.warm_start and hasattr(self, "model_")):
            self.config_ = self._config()
            self.model_ = det.init_detector(self.config_, self.random_state)
            self.n_steps_total_ = 0
        xs = det.images_to_input(X)
        targets = det.target_batch(y, self.config_)
        gen = torch.Generator().manual_seed(int(self.random_state) + 104729 * (self.n_steps_total_ + 1))
        opt = torch.optim.Adam(self.model_.parameters(), lr=self.learning_rate, betas=(0.9, 0.999))
        self.model_.train()
        self.log_ = []
        t0 = time.perf_counter()
        for _ in range(self.steps):
            idx = torch.randint(0, len(xs), (min(self.batch_size, len(xs)),), generator=gen)
            loss = det.detector_loss(self.model_(xs[idx]), targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.n_steps_total_ += 1
            row = _log_row(self.n_steps_total_, loss.item(), self.learning_rate, t0)
            self.log_.append(row)
            if callback is not None:
                callback(row, self)
        self.model_.eval()
        return self

    def predict_heatmaps(self, X):
        check_is_fitted(self, "model_")
        return det.predict(self.model_, check_images(X, self.input_size))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_size)
        return np.stack([lm.points for lm in det.predict_landmarks(self.model_, X)])

    def score(self, X, y) -> float:
        pred = self.predict(X)
        y = check_landmark_array(y, len(pred), self.n_landmarks)
        return -float(np.mean([nme(LandmarkSet(p), LandmarkSet(g)) for p, g in zip(pred, y)]))

    def save(self, path, metadata=None):
        check_is_fitted(self, "model_")
        cfg = {"params": self.get_params(), "detector": self.config_.to_dict(), "n_steps_total": self.n_steps_total_}
        save_checkpoint(path, "detector", cfg, self.model_.state_dict(), metadata)

    @classmethod
    def load(cls, path):
        header, state = load_checkpoint(path, "detector")
        cfg = header["config"]
        est = cls(**cfg["params"])
        est.config_ = det.DetectorConfig(**cfg["detector"])
        est.model_ = det.init_detector(est.config_, est.random_state)
        est.model_.load_state_dict(state)
        est.model_.eval()
        est.n_steps_total_ = int(cfg["n_steps_total"])
        return est, header
