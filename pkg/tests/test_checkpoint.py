import struct

import numpy as np
import pytest
import torch

from ldlab.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from ldlab.exceptions import CheckpointMismatch, IoError


def _state():
    return {
        "a.weight": torch.arange(6, dtype=torch.float32).reshape(2, 3),
        "a.bias": torch.zeros(3),
        "idx": torch.tensor([1, 2, 3], dtype=torch.int64),
        "d": torch.tensor([0.5], dtype=torch.float64),
    }


def test_round_trip(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "detector", {"w": 4}, _state(), {"stage": "x", "step": 3})
    header, state = load_checkpoint(p, "detector")
    assert header["format_version"] == 1
    assert header["config"] == {"w": 4}
    assert header["metadata"] == {"stage": "x", "step": 3}
    assert list(state) == list(_state())
    for k, v in _state().items():
        assert torch.equal(state[k], v.float() if v.dtype == torch.float64 else v)


def test_bytes_deterministic(tmp_path):
    save_checkpoint(tmp_path / "a", "autoencoder", {"k": 1}, _state(), {"seed": 0})
    save_checkpoint(tmp_path / "b", "autoencoder", {"k": 1}, _state(), {"seed": 0})
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a").read_bytes().startswith(MAGIC)


def test_rejections(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, "denoiser", {}, _state())
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(p, "detector")
    bad = tmp_path / "bad"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(bad)
    raw = p.read_bytes()
    n = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])[0]
    header = raw[len(MAGIC) + 8:len(MAGIC) + 8 + n].replace(b'"format_version": 1', b'"format_version": 9')
    (tmp_path / "v9").write_bytes(raw[:len(MAGIC)] + struct.pack("<Q", len(header)) + header + raw[len(MAGIC) + 8 + n:])
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "v9")
    with pytest.raises(IoError):
        load_checkpoint(tmp_path / "missing")
    with pytest.raises(ValueError):
        save_checkpoint(p, "optimizer", {}, {})
