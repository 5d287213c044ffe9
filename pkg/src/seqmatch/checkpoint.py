"""Versioned binary checkpoint container.

Layout: an 8-byte magic/version tag, a little-endian uint32 header length,
a UTF-8 JSON header (config echo, catalog hash, item count, tensor count),
then each named tensor as uint32 name length + name, uint32 rank + uint32
dims, and the values as 32-bit little-endian floats in row-major order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .losses import TrainConfig
from .model import MatchingModel, ModelConfig

MAGIC = b"SMCKPT01"


class CheckpointError(ValueError):
    """Raised for unreadable or mismatched checkpoint files."""


@dataclass
class Checkpoint:
    config: TrainConfig
    catalog_hash: str
    item_count: int
    tensors: dict[str, np.ndarray]


def snapshot(model: MatchingModel, config: TrainConfig,
             catalog_hash: str) -> Checkpoint:
    """Freeze the model's current parameters into a checkpoint object."""
    tensors = {name: t.detach().cpu().numpy().astype(np.float32)
               for name, t in model.state_dict().items()}
    return Checkpoint(config=config, catalog_hash=catalog_hash,
                      item_count=model.config.item_count, tensors=tensors)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    header = json.dumps({
        "config": dataclasses.asdict(ckpt.config),
        "catalog_hash": ckpt.catalog_hash,
        "item_count": ckpt.item_count,
        "tensor_count": len(ckpt.tensors),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for name, arr in ckpt.tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        header_len, = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, header_len).decode("utf-8"))
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        config = TrainConfig(**{k: v for k, v in header["config"].items()
                                if k in known})
        tensors: dict[str, np.ndarray] = {}
        for _ in range(header["tensor_count"]):
            name_len, = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            ndim, = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).copy()
    return Checkpoint(config=config, catalog_hash=header["catalog_hash"],
                      item_count=header["item_count"], tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint) -> MatchingModel:
    cfg = ckpt.config
    model = MatchingModel(ModelConfig(
        item_count=ckpt.item_count, dim=cfg.dim, n_layers=cfg.n_layers,
        n_interests=cfg.n_interests, max_len=cfg.max_len, tau=cfg.tau))
    model.load_state_dict({name: torch.from_numpy(arr)
                           for name, arr in ckpt.tensors.items()})
    model.eval()
    return model
