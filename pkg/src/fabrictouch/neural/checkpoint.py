"""Versioned checkpoint container: a JSON header followed by raw tensor bytes.

Layout::

    b"FTCKPT\\x00\\x01"  magic + format version
    uint64 LE           header length
    header              UTF-8 JSON (sorted keys): config, seed, step, tensor table
    payload             tensors back to back, little-endian, C order

No timestamps or pickles are written, so equal states give equal bytes.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointError
from .model import FabricNet, ModelConfig

MAGIC = b"FTCKPT\x00"
VERSION = 1


@dataclass
class ModelState:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    rng_seed: int = 0
    step: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: FabricNet, rng_seed: int = 0, step: int = 0, extra: dict | None = None) -> "ModelState":
        params = OrderedDict((k, v.detach().cpu().numpy().copy()) for k, v in model.state_dict().items())
        return cls(model.cfg, params, rng_seed, step, dict(extra or {}))

    def build(self) -> FabricNet:
        model = FabricNet(self.config)
        first = next(iter(self.params.values()), None)
        if first is not None and np.issubdtype(first.dtype, np.floating):
            model = model.to(getattr(torch, np.dtype(first.dtype).name))
        model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.params.items()})
        return model


def save_checkpoint(state: ModelState, path: str | Path) -> Path:
    table, chunks, offset = [], [], 0
    for name, arr in state.params.items():
        a = np.ascontiguousarray(arr)
        data = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        table.append({"name": name, "dtype": a.dtype.str.lstrip("<>|="), "shape": list(a.shape),
                      "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({
        "config": state.config.to_dict(), "seed": state.rng_seed, "step": state.step,
        "extra": state.extra, "tensors": table,
    }, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC + bytes([VERSION]))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for c in chunks:
            f.write(c)
    return path


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> ModelState:
    """Read a checkpoint; refuse it if ``expected`` is given and differs from the stored config."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = raw[len(MAGIC)]
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = len(MAGIC) + 1
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos:pos + hlen])
    pos += hlen
    config = ModelConfig.from_dict(header["config"])
    if expected is not None and expected != config:
        diff = {k: (v, getattr(config, k)) for k, v in expected.to_dict().items()
                if config.to_dict().get(k) != v}
        raise CheckpointError(f"{path}: config mismatch (expected, stored): {diff}")
    params = OrderedDict()
    for t in header["tensors"]:
        start = pos + t["offset"]
        buf = raw[start:start + t["nbytes"]]
        if len(buf) != t["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {t['name']}")
        params[t["name"]] = np.frombuffer(buf, dtype=np.dtype("<" + t["dtype"])).reshape(t["shape"]).copy()
    return ModelState(config, params, header["seed"], header["step"], header.get("extra", {}))
