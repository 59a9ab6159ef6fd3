import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kgfit import io


def test_header_layout(tmp_path):
    p = tmp_path / "m.kgfe"
    io.write_matrix(p, np.ones((2, 3)))
    raw = p.read_bytes()
    assert raw[:4] == b"KGFE"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:14], "little") == 2
    assert int.from_bytes(raw[14:18], "little") == 3
    assert len(raw) == 18 + 2 * 3 * 4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 5), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_matrix_roundtrip(tmp_path_factory, M):
    p = tmp_path_factory.mktemp("m") / "x.kgfe"
    io.write_matrix(p, M)
    back = io.read_matrix(p)
    assert back.dtype == np.float64
    np.testing.assert_array_equal(back, M.astype(np.float64))


def test_truncated_file(tmp_path):
    p = tmp_path / "m.kgfe"
    io.write_matrix(p, np.ones((4, 4)))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(io.MatrixFormatError):
        io.read_matrix(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "m.kgfe"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(io.MatrixFormatError):
        io.read_matrix(p)


def test_json_is_stable():
    assert io.dump_json({"b": 0.1, "a": [1, 2]}) == io.dump_json({"b": 0.1, "a": [1, 2]})
    assert io.dump_json({"x": 0.1}).endswith("\n")
