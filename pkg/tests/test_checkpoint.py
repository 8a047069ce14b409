import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fedpeft import checkpoint
from fedpeft.checkpoint import CheckpointError

arrays = hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=3, max_side=5),
                    elements=st.floats(-1e6, 1e6, width=32))


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=5))
def test_roundtrip_preserves_names_order_and_values(tensors):
    blob = checkpoint.dumps(tensors)
    back = checkpoint.loads(blob)
    assert list(back) == list(tensors)
    for k, v in tensors.items():
        assert back[k].shape == v.shape
        np.testing.assert_array_equal(back[k], v)
    assert len(blob) - checkpoint.header_size(tensors) == sum(4 * v.size for v in tensors.values())


def test_layout_is_little_endian_with_magic():
    blob = checkpoint.dumps({"w": np.array([1.0, -2.0], np.float32)})
    assert blob[:4] == b"FPTN"
    version, count, header_len = struct.unpack_from("<HII", blob, 4)
    assert (version, count) == (1, 1)
    assert header_len == 14 + 2 + 1 + 1 + 4
    assert blob[header_len:] == np.array([1.0, -2.0], "<f4").tobytes()


@pytest.mark.parametrize("mutate", [
    lambda b: b[:3],
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<H", 9) + b[6:],
    lambda b: b[:20],
    lambda b: b[:-1],
    lambda b: b + b"\0",
])
def test_corrupt_blobs_raise(mutate):
    blob = checkpoint.dumps({"weight": np.ones((2, 3), np.float32)})
    with pytest.raises(CheckpointError):
        checkpoint.loads(mutate(blob))


def test_file_roundtrip(tmp_path):
    path = tmp_path / "x.fptn"
    n = checkpoint.save(path, {"a": np.arange(4, dtype=np.float32)})
    assert path.stat().st_size == n
    np.testing.assert_array_equal(checkpoint.load(path)["a"], np.arange(4))
