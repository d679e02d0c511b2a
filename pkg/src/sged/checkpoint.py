"""
Binary checkpoint format (version 1). All integers little-endian.

======  =========================  =========================================
offset  field                      encoding
======  =========================  =========================================
0       magic                      8 bytes, ASCII ``SGEDCKPT``
8       format version             uint32, currently 1
12      header length ``n``        uint32
16      header                     ``n`` bytes of UTF-8 JSON (see below)
16+n    parameter count ``P``      uint32
...     ``P`` parameter records    in the order they were written
======  =========================  =========================================

Each parameter record:

* uint16 name length ``k``, then ``k`` bytes of UTF-8 name
* uint8 rank ``r``, then ``r`` uint32 dimensions
* ``prod(dims)`` IEEE-754 float64 values, little-endian, row-major

The JSON header carries ``config`` (flat dotted-key dict), ``config_hash``,
``label_vocab``, ``feature_dim``, ``model`` (model hyperparameters) and an
optional ``meta`` dict. Nothing follows the last record.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from .model import ModelConfig, SGEDModel

MAGIC = b"SGEDCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(path: str | Path, model: SGEDModel, config: Mapping[str, Any], config_hash: str, meta: Optional[dict] = None) -> None:
    header = {
        "config": dict(config),
        "config_hash": config_hash,
        "label_vocab": list(model.label_vocab),
        "feature_dim": model.feature_dim,
        "model": model.config.to_dict(),
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(model.params))]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(p.value.data, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, {name: array})``."""
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = struct.unpack_from(fmt, buf, pos)
        pos += size
        return out

    version, hlen = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if pos + hlen > len(buf):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(buf[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    pos += hlen
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (k,) = take("<H")
        name = buf[pos : pos + k].decode("utf-8")
        pos += k
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 8 * n > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {name}")
        params[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(dims)
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return header, params


def load(path: str | Path) -> tuple[SGEDModel, dict]:
    header, values = read(path)
    model = SGEDModel(ModelConfig(**header["model"]), header["feature_dim"], header["label_vocab"])
    model.load_state_dict(values)
    return model, header
