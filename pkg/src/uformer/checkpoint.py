"""Self-describing checkpoint container.

Layout::

    b"UFMRCKPT" | u32 version | u64 header length | header JSON | payload

The header holds the flat config, free-form metadata and a manifest entry
``{name, shape, dtype, offset, nbytes}`` per tensor. Payloads are
little-endian; floating tensors are stored as float32, integer buffers as
int64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .config import UformerConfig

MAGIC = b"UFMRCKPT"
VERSION = 1
_DTYPES = {"float32": np.dtype("<f4"), "int64": np.dtype("<i8")}


class CheckpointError(RuntimeError):
    pass


class CheckpointMismatch(CheckpointError):
    def __init__(self, diffs: list[str]):
        self.diffs = diffs
        super().__init__("checkpoint does not match model:\n  " + "\n  ".join(diffs))


def _encode(t: torch.Tensor) -> tuple[str, bytes]:
    t = t.detach().cpu()
    if t.is_floating_point():
        return "float32", t.to(torch.float32).numpy().astype("<f4").tobytes()
    return "int64", t.to(torch.int64).numpy().astype("<i8").tobytes()


def save(path: str | Path, cfg: UformerConfig, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    manifest, chunks, offset = [], [], 0
    for name, t in tensors.items():
        dtype, raw = _encode(t)
        manifest.append({"name": name, "shape": list(t.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config_mod.to_flat(cfg), "meta": meta or {}, "tensors": manifest},
                        sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<IQ", VERSION, len(header)) + header)
        for raw in chunks:
            fh.write(raw)


def load(path: str | Path) -> tuple[UformerConfig, dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header = json.loads(data[20 : 20 + hlen])
    base = 20 + hlen
    tensors = {}
    for rec in header["tensors"]:
        start = base + rec["offset"]
        raw = data[start : start + rec["nbytes"]]
        if len(raw) != rec["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {rec['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[rec["dtype"]]).reshape(rec["shape"])
        tensors[rec["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    return config_mod.from_flat(header["config"]), tensors, header["meta"]


def diff_state(expected: dict[str, torch.Tensor], found: dict[str, torch.Tensor]) -> list[str]:
    diffs = []
    for name in expected:
        if name not in found:
            diffs.append(f"missing tensor {name} {tuple(expected[name].shape)}")
        elif tuple(found[name].shape) != tuple(expected[name].shape):
            diffs.append(f"shape mismatch {name}: model {tuple(expected[name].shape)}, "
                         f"checkpoint {tuple(found[name].shape)}")
    diffs += [f"unexpected tensor {n} {tuple(found[n].shape)}" for n in found if n not in expected]
    return diffs


def load_into(model: torch.nn.Module, tensors: dict[str, torch.Tensor], prefix: str = "model.") -> None:
    """Copy ``prefix``-named tensors into ``model``; raise a named diff on any mismatch."""
    found = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    expected = model.state_dict()
    diffs = diff_state(expected, found)
    if diffs:
        raise CheckpointMismatch(diffs)
    with torch.no_grad():
        for name, t in expected.items():
            t.copy_(found[name].to(t.dtype))
