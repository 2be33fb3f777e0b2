import struct
from collections import OrderedDict

import numpy as np
import pytest

from svdc.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from svdc.tensor import Tensor


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(42)
    params = OrderedDict(
        [
            ("w", Tensor(rng.normal(size=(4, 3, 3, 3)))),
            ("b", Tensor(rng.normal(size=(4,)))),
            ("scalarish", Tensor(np.array(np.pi))),
            ("weird/name.0", Tensor(np.array([np.nextafter(1.0, 2.0), -0.0, 1e-308]))),
        ]
    )
    path = tmp_path / "p.svdckpt"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].shape == params[k].data.shape
        assert loaded[k].tobytes() == params[k].data.tobytes()


def test_save_load_save_identical_bytes(tmp_path):
    rng = np.random.default_rng(0)
    params = OrderedDict([("a", Tensor(rng.normal(size=(5, 7))))])
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params)
    save_checkpoint(p2, OrderedDict((k, Tensor(v)) for k, v in load_checkpoint(p1).items()))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, OrderedDict([("w", Tensor(np.ones((4, 4))))]))
    blob = path.read_bytes()
    path.write_bytes(blob[:-9])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_header_layout(tmp_path):
    path = tmp_path / "h.ckpt"
    save_checkpoint(path, OrderedDict([("ab", Tensor(np.array([1.5, 2.5])))]))
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    assert struct.unpack("<Q", blob[8:16])[0] == 2  # name length
    assert blob[16:18] == b"ab"
    assert struct.unpack("<Q", blob[18:26])[0] == 1  # rank
    assert struct.unpack("<Q", blob[26:34])[0] == 2  # dim
    assert np.frombuffer(blob[34:], dtype="<f8").tolist() == [1.5, 2.5]
