import json
import struct

import numpy as np
import pytest

from camsharp.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_header, save_checkpoint
from camsharp.network import Architecture, init_params, tiny_architecture


def test_round_trip(tmp_path):
    params = init_params(Architecture.default(4), 11)
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path, {"note": "x"})
    back, meta = load_checkpoint(path)
    assert meta == {"note": "x"}
    assert back.arch == params.arch and back.seed == 11
    assert back.names() == params.names()
    assert back.layers == params.layers
    for k in params.names():
        assert back.tensors[k].tobytes() == params.tensors[k].tobytes()


def test_layout_is_documented_format(tmp_path):
    params = init_params(tiny_architecture(), 0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(params, path)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"CAMCKPT1"
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + n])
    assert header == read_header(path)
    assert header["format_version"] == 1
    payload = np.frombuffer(raw[12 + n :], dtype="<f8")
    assert payload.size == params.count()
    first = header["params"][0]
    assert first["name"] == "conv0.kernel" and first["offset"] == 0
    np.testing.assert_array_equal(payload[: first["count"]].reshape(first["shape"]), params.tensors["conv0.kernel"])


def test_errors(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "none.ckpt")
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(junk)
    params = init_params(tiny_architecture(), 0)
    good = tmp_path / "m.ckpt"
    save_checkpoint(params, good)
    truncated = tmp_path / "t.ckpt"
    truncated.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(truncated)
