"""Binary tensor format: byte-level layout oracle, round trips, and
malformed-input rejection."""

import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drca.numerics import F32
from drca.tensor_io import (
    TensorFileError,
    load_tensor_dir,
    read_tnsr,
    save_tensor_dir,
    write_tnsr,
)


def test_file_bytes_match_layout_oracle(tmp_path):
    t = np.array([[1.0, -2.5], [0.0, 3.25], [7.0, -0.125]], F32)
    path = tmp_path / "t.tnsr"
    write_tnsr(path, t)
    raw = path.read_bytes()
    want = b"TNSR" + struct.pack("<I", 2) + struct.pack("<2I", 3, 2)
    want += struct.pack("<6f", 1.0, -2.5, 0.0, 3.25, 7.0, -0.125)  # row-major
    assert raw == want


def test_round_trip_preserves_values_shape_dtype(tmp_path):
    for shape in [(4,), (2, 3), (2, 3, 4, 2)]:
        t = np.arange(np.prod(shape), dtype=F32).reshape(shape) - F32(5.5)
        path = tmp_path / "x.tnsr"
        write_tnsr(path, t)
        back = read_tnsr(path)
        assert back.dtype == F32
        assert back.shape == t.shape
        assert np.array_equal(back, t)


def test_write_accepts_any_dtype_but_stores_float32(tmp_path):
    path = tmp_path / "i.tnsr"
    write_tnsr(path, np.array([1, 2, 3], dtype=np.int64))
    back = read_tnsr(path)
    assert back.dtype == F32
    assert np.array_equal(back, [1.0, 2.0, 3.0])


def test_non_finite_values_are_refused(tmp_path):
    path = tmp_path / "bad.tnsr"
    with pytest.raises(TensorFileError):
        write_tnsr(path, np.array([1.0, np.nan], F32))
    with pytest.raises(TensorFileError):
        write_tnsr(path, np.array([np.inf], F32))
    assert not path.exists() or path.read_bytes() == b""


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.tnsr"
    write_tnsr(path, np.ones(3, F32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(TensorFileError, match="magic"):
        read_tnsr(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "x.tnsr"
    write_tnsr(path, np.ones((2, 3), F32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(TensorFileError, match="payload"):
        read_tnsr(path)
    path.write_bytes(raw[:6])
    with pytest.raises(TensorFileError):
        read_tnsr(path)


def test_oversized_payload_rejected(tmp_path):
    path = tmp_path / "x.tnsr"
    write_tnsr(path, np.ones(3, F32))
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(TensorFileError, match="payload"):
        read_tnsr(path)


@settings(max_examples=50, deadline=None)
@given(arrays(F32, st.tuples(st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_property(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("rt") / "p.tnsr"
    write_tnsr(path, t)
    assert np.array_equal(read_tnsr(path), t)


def test_tensor_dir_round_trip_and_manifest(tmp_path):
    tensors = {
        "alpha": np.arange(6, dtype=F32).reshape(2, 3),
        "beta.gamma": np.ones(4, F32),
    }
    d = tmp_path / "store"
    save_tensor_dir(d, tensors)
    manifest = (d / "manifest.tsv").read_text().splitlines()
    assert manifest == ["alpha\t2x3", "beta.gamma\t4"]
    back = load_tensor_dir(d)
    assert set(back) == set(tensors)
    for name in tensors:
        assert np.array_equal(back[name], tensors[name])


def test_tensor_dir_detects_extent_tampering(tmp_path):
    d = tmp_path / "store"
    save_tensor_dir(d, {"w": np.ones((2, 3), F32)})
    manifest = d / "manifest.tsv"
    manifest.write_text("w\t3x2\n")
    with pytest.raises(TensorFileError, match="extents"):
        load_tensor_dir(d)


def test_tensor_dir_missing_manifest(tmp_path):
    os.makedirs(tmp_path / "empty", exist_ok=True)
    with pytest.raises(TensorFileError, match="manifest"):
        load_tensor_dir(tmp_path / "empty")
