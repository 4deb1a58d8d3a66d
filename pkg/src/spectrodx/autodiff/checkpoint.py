"""Binary checkpoints.

Layout: ``b"SDX1"``, a little-endian uint32 byte length, a UTF-8 JSON
descriptor, then raw little-endian parameter/optimizer/buffer arrays in the
order the descriptor lists them.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import Network

MAGIC = b"SDX1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint."""


@dataclass
class ModelCheckpoint:
    architecture: str
    networks: dict[str, Network]
    seed: int
    meta: dict = field(default_factory=dict)


def _entries(net: Network):
    for p in net.parameters():
        yield p.name, "value", p.data
        yield p.name, "adam_m", p.adam_m
        yield p.name, "adam_v", p.adam_v
    for i, b in enumerate(net.buffers()):
        yield f"{net.name}.buffer{i}", "buffer", b


def save_checkpoint(path, ckpt: ModelCheckpoint, dtype: str = "<f4") -> Path:
    """Write ``ckpt``; arrays are stored as ``dtype`` (float32 unless asked otherwise)."""
    path = Path(path)
    dt = np.dtype(dtype).newbyteorder("<")
    nets = []
    blobs = []
    for key, net in ckpt.networks.items():
        tensors = []
        for name, role, arr in _entries(net):
            tensors.append({"name": name, "role": role, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
        nets.append({
            "key": key,
            "descriptor": net.descriptor(),
            "step_counts": [p.step_count for p in net.parameters()],
            "tensors": tensors,
        })
    desc = {
        "format_version": FORMAT_VERSION,
        "architecture": ckpt.architecture,
        "seed": ckpt.seed,
        "storage_dtype": dt.str,
        "networks": nets,
        "meta": ckpt.meta,
    }
    head = json.dumps(desc, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[4:8])
    try:
        desc = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable descriptor") from exc
    if desc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {desc.get('format_version')}")
    dt = np.dtype(desc["storage_dtype"])
    offset = 8 + n
    networks = {}
    for entry in desc["networks"]:
        net = Network.from_descriptor(entry["descriptor"])
        arrays = []
        for t in entry["tensors"]:
            count = int(np.prod(t["shape"]))
            nbytes = count * dt.itemsize
            if offset + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated data for {t['name']}")
            arrays.append(np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(t["shape"]))
            offset += nbytes
        it = iter(arrays)
        for p, steps in zip(net.parameters(), entry["step_counts"]):
            p.data[...] = next(it)
            p.adam_m[...] = next(it)
            p.adam_v[...] = next(it)
            p.step_count = steps
        for b in net.buffers():
            b[...] = next(it)
        networks[entry["key"]] = net
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelCheckpoint(desc["architecture"], networks, desc["seed"], desc.get("meta", {}))
