"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeMismatch, WrongCount


def check_images(X, size: int | None = None, name: str = "X") -> np.ndarray:
    """Return (N, H, W, 3) float32 images in [0, 1]; uint8 input is rescaled."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ShapeMismatch(f"{name} must be (N, H, W, 3) RGB images, got shape {X.shape}")
    if size is not None and X.shape[1:3] != (size, size):
        raise ShapeMismatch(f"{name} must be {size}x{size}, got {X.shape[1]}x{X.shape[2]}")
    if X.dtype == np.uint8:
        return X.astype(np.float32) / 255.0
    flat = check_array(X.reshape(len(X), -1), dtype=np.float32, ensure_min_samples=1)
    if flat.min() < 0.0 or flat.max() > 1.0:
        raise ShapeMismatch(f"{name} float images must lie in [0, 1]")
    return flat.reshape(X.shape)


def check_landmark_array(y, n_samples: int | None = None, n_landmarks: int = 68) -> np.ndarray:
    """Return (N, n_landmarks, 2) float64 normalized coordinates."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 2 * n_landmarks:
        y = y.reshape(len(y), n_landmarks, 2)
    if y.ndim != 3 or y.shape[1:] != (n_landmarks, 2):
        raise WrongCount(f"landmarks must be (N, {n_landmarks}, 2), got {y.shape}")
    check_array(y.reshape(len(y), -1), ensure_min_samples=1)
    if n_samples is not None and len(y) != n_samples:
        raise ShapeMismatch(f"{len(y)} landmark sets for {n_samples} images")
    return y


def check_styles(styles, n_samples: int, vocab_size: int) -> np.ndarray:
    if styles is None:
        return np.zeros(n_samples, dtype=np.int64)
    s = np.asarray(styles, dtype=np.int64).reshape(-1)
    if s.size == 1 and n_samples != 1:
        s = np.full(n_samples, int(s[0]), dtype=np.int64)
    if len(s) != n_samples:
        raise ShapeMismatch(f"{len(s)} style ids for {n_samples} samples")
    if s.min() < 0 or s.max() >= vocab_size:
        raise ShapeMismatch(f"style ids must lie in [0, {vocab_size})")
    return s
