"""Binary checkpoint container for ModelParams.

Layout (all integers little-endian)::

    8 bytes   magic b"CAMCKPT1"
    4 bytes   u32 header length H
    H bytes   UTF-8 JSON header
    ...       parameter payload, float64 little-endian, C order,
              concatenated in header order

The header holds ``format_version``, ``architecture`` (Architecture.to_dict),
``seed``, ``params`` (list of {name, shape, layer, offset, count}; offset and
count are in float64 elements from the start of the payload) and a free-form
``metadata`` dict.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import Architecture, ModelParams

MAGIC = b"CAMCKPT1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, path, metadata: dict | None = None) -> None:
    entries, offset = [], 0
    for name, arr in params.tensors.items():
        entries.append({"name": name, "shape": list(arr.shape), "layer": int(params.layers.get(name, -1)),
                        "offset": offset, "count": int(arr.size)})
        offset += arr.size
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": params.arch.to_dict(),
        "seed": int(params.seed),
        "params": entries,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> dict:
    return _read(path)[0]


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Returns (params, metadata)."""
    header, payload = _read(path)
    data = np.frombuffer(payload, dtype="<f8")
    try:
        arch = Architecture.from_dict(header["architecture"])
        tensors, layers = {}, {}
        for e in header["params"]:
            start, count = int(e["offset"]), int(e["count"])
            if start + count > data.size:
                raise CheckpointError(f"payload truncated at parameter {e['name']!r}")
            tensors[e["name"]] = data[start : start + count].reshape(e["shape"]).astype(np.float64)
            layers[e["name"]] = int(e["layer"])
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint header: {e}") from None
    expected = {n: s for n, s, _ in arch.param_shapes()}
    got = {n: t.shape for n, t in tensors.items()}
    if expected != got:
        raise CheckpointError("parameter names or shapes do not match the stored architecture")
    return ModelParams(arch, int(header["seed"]), tensors, layers), header.get("metadata", {})


def _read(path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC or len(raw) < 12:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    return header, raw[12 + n :]
