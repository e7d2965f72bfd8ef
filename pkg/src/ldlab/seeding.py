"""Seed derivation and thread control.

All randomness in a run descends from one global seed. A purpose string
(and optional indices) is hashed together with the parent seed so that
adding a new consumer never shifts the streams of existing ones.
"""
from __future__ import annotations

import hashlib
import os

import numpy as np

THREADS_ENV = "LDLAB_THREADS"


def derive_seed(seed: int, *parts) -> int:
    """Stable 63-bit child seed for ``(seed, *parts)``."""
    key = "/".join([str(int(seed))] + [str(p) for p in parts]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts) if parts else int(seed))


def configure_threads(n: int | None = None) -> int:
    """Apply the thread policy; ``LDLAB_THREADS=1`` forces bit-reproducible mode."""
    import torch

    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is not None:
        torch.set_num_threads(max(1, n))
    if n == 1:
        torch.use_deterministic_algorithms(True)
    return torch.get_num_threads()
