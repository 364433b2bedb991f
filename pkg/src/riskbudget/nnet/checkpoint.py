"""Binary parameter checkpoints: magic, version, JSON header, float64 payload."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .networks import NetParams

MAGIC = b"RBNNCKPT"
VERSION = 1


def save(path, nets: dict, **meta) -> None:
    """Write named networks plus metadata (seed, config echo) atomically."""
    header = {"version": VERSION, "meta": meta, "nets": {}}
    payload, offset = [], 0
    for name, net in nets.items():
        header["nets"][name] = {"architecture": net.architecture(), "offset": offset, "size": net.n_params}
        payload.append(net.values.astype("<f8").tobytes())
        offset += net.n_params
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)
    os.replace(tmp, path)


def load(path) -> tuple[dict, dict]:
    """Return ({name: NetParams}, metadata)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a parameter checkpoint")
        version, size = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    nets = {}
    for name, entry in header["nets"].items():
        vals = data[entry["offset"]:entry["offset"] + entry["size"]]
        nets[name] = NetParams.from_architecture(entry["architecture"], vals)
    return nets, header["meta"]
