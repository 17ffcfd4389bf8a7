"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian u32 format version, u32 header length,
UTF-8 JSON header, then every tensor as float64 little-endian in the order
the header lists them.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"GRCKPT\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model_kind: str, module: torch.nn.Module, config: dict, layers=()) -> Path:
    path = Path(path)
    state = module.state_dict()
    header = {
        "model_kind": model_kind,
        "config": config,
        "layers": [spec.to_dict() for spec in layers],
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for t in state.values():
            fh.write(t.detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes())
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(data[16:16 + hlen].decode())
    offset = 16 + hlen
    tensors = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors[name] = arr.copy()
        offset += 8 * n
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header, tensors


def load_state(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    if set(state) != set(tensors):
        raise CheckpointError(f"tensor names differ: {sorted(set(state) ^ set(tensors))}")
    with torch.no_grad():
        for name, t in state.items():
            if tuple(t.shape) != tensors[name].shape:
                raise CheckpointError(f"{name}: shape {tensors[name].shape} != {tuple(t.shape)}")
            t.copy_(torch.from_numpy(tensors[name]).to(t.dtype))


def expect_kind(header: dict, *kinds: str) -> None:
    if header["model_kind"] not in kinds:
        raise CheckpointError(f"expected model kind {kinds}, found {header['model_kind']!r}")
