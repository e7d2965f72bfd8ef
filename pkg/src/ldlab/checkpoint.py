"""Single-file checkpoint container shared by all trainable models.

Layout::

    b"LDLABCKPT\\n" | uint64 header length | JSON header | raw tensor blobs

The header holds ``format_version``, ``kind``, the model config, free-form
metadata and a table of tensors (name, dtype, shape, offset, nbytes). The
writer is deterministic: identical inputs give identical bytes.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .exceptions import CheckpointMismatch, IoError

MAGIC = b"LDLABCKPT\n"
FORMAT_VERSION = 1
KINDS = ("denoiser", "autoencoder", "detector")


def save_checkpoint(path, kind: str, config: dict, state: dict, metadata: dict | None = None) -> None:
    if kind not in KINDS:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    table, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else np.asarray(tensor)
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            arr = arr.astype(np.float32)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        table.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "metadata": metadata or {},
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(hbytes)))
            fh.write(hbytes)
            for b in blobs:
                fh.write(b)
    except OSError as e:
        raise IoError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path, kind: str | None = None):
    """Return ``(header, state)`` with ``state`` an ordered dict of torch tensors."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e
    if not raw.startswith(MAGIC):
        raise CheckpointMismatch(f"{path} is not an ldlab checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[pos:pos + 8])
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint format_version {header.get('format_version')!r}")
    if kind is not None and header.get("kind") != kind:
        raise CheckpointMismatch(f"expected a {kind} checkpoint, got {header.get('kind')!r}")
    state = OrderedDict()
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        arr = np.frombuffer(raw[start:start + entry["nbytes"]], dtype=np.dtype(entry["dtype"]))
        state[entry["name"]] = torch.from_numpy(arr.reshape(entry["shape"]).copy())
    return header, state
