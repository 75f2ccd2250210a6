import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvsr import Tensor
from deskvsr.errors import BadHeader, BadMagic, SerializationError, Truncated
from deskvsr.serialize import (
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    load_tensor,
    save_checkpoint,
    save_tensor,
)


def test_header_layout():
    buf = encode_tensor(Tensor(np.zeros((2, 3), dtype=np.float32)))
    assert buf[:4] == b"VSRT"
    assert buf[4:7] == bytes([1, 0, 2])
    assert struct.unpack("<2I", buf[7:15]) == (2, 3)
    assert len(buf) == 15 + 6 * 4


def test_roundtrip_f32_payload_identical(tmp_path):
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3)).astype(np.float32))
    p = tmp_path / "x.vsrt"
    save_tensor(p, x)
    y = load_tensor(p)
    assert y.dtype == np.float32 and y.shape == (2, 3)
    assert y.data.tobytes() == x.data.tobytes()


@settings(max_examples=30, deadline=None)
@given(
    shape=st.lists(st.integers(1, 3), min_size=1, max_size=6).map(tuple),
    dtype=st.sampled_from([np.float32, np.float64]),
    seed=st.integers(0, 1000),
)
def test_roundtrip_bit_exact(shape, dtype, seed):
    arr = np.random.default_rng(seed).standard_normal(shape).astype(dtype)
    arr.flat[0] = -0.0
    y = decode_tensor(encode_tensor(Tensor(arr)))
    assert y.dtype == dtype and y.data.tobytes() == arr.tobytes()


def test_bad_magic():
    buf = b"XXXX" + encode_tensor(Tensor(np.ones(2)))[4:]
    with pytest.raises(BadMagic):
        decode_tensor(buf)


def test_six_dims_declared_five_present():
    buf = b"VSRT" + bytes([1, 1, 6]) + struct.pack("<5I", 1, 1, 1, 1, 1)
    with pytest.raises(Truncated):
        decode_tensor(buf)


def test_truncated_payload():
    buf = encode_tensor(Tensor(np.ones((4, 4))))
    with pytest.raises(Truncated):
        decode_tensor(buf[:-3])


@pytest.mark.parametrize("patch", [(4, 2), (5, 7), (6, 0), (6, 7)])
def test_bad_header_fields(patch):
    buf = bytearray(encode_tensor(Tensor(np.ones(2))))
    pos, val = patch
    buf[pos] = val
    with pytest.raises(BadHeader):
        decode_tensor(bytes(buf))


def test_errors_are_distinct():
    assert len({BadMagic, Truncated, BadHeader}) == 3
    for cls in (BadMagic, Truncated, BadHeader):
        assert issubclass(cls, SerializationError)


def test_checkpoint_roundtrip_keeps_order(tmp_path):
    named = {"b.weight": np.ones((2, 2), np.float32), "a.bias": np.arange(3.0)}
    p = tmp_path / "ck.vsrt"
    save_checkpoint(p, named)
    back = load_checkpoint(p)
    assert list(back) == ["b.weight", "a.bias"]
    for k in named:
        assert back[k].data.tobytes() == np.asarray(named[k]).tobytes()
    assert not (tmp_path / "ck.vsrt.tmp").exists()


def test_checkpoint_truncated(tmp_path):
    p = tmp_path / "ck.vsrt"
    save_checkpoint(p, {"w": np.ones(5)})
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(Truncated):
        load_checkpoint(p)
