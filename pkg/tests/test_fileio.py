from __future__ import annotations

import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eigenshield.errors import CorruptFileError, VersionMismatchError
from eigenshield.fileio import (
    MAGIC,
    MATRIX_FORMAT_VERSION,
    decode_matrix,
    dumps,
    encode_matrix,
    load_matrix_any,
    read_csv_matrix,
    read_matrix,
    write_csv_matrix,
    write_matrix,
)


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(allow_nan=False)))
def test_matrix_encoding_is_bit_exact(m):
    back = decode_matrix(encode_matrix(m))
    assert back.shape == m.shape
    assert back.tobytes() == np.ascontiguousarray(m, dtype="<f8").tobytes()


def test_matrix_header_layout():
    blob = encode_matrix(np.zeros((3, 5)))
    assert blob[:4] == MAGIC
    assert struct.unpack_from("<IQQ", blob, 4) == (MATRIX_FORMAT_VERSION, 3, 5)
    assert len(blob) == 24 + 3 * 5 * 8


def test_matrix_file_round_trip(tmp_path):
    m = np.random.default_rng(0).standard_normal((7, 4))
    write_matrix(tmp_path / "m.esmx", m)
    np.testing.assert_array_equal(read_matrix(tmp_path / "m.esmx"), m)
    assert not [p for p in tmp_path.iterdir() if p.name.endswith(".tmp")]


def test_bad_magic_is_corrupt():
    blob = bytearray(encode_matrix(np.ones((2, 2))))
    blob[:4] = b"NOPE"
    with pytest.raises(CorruptFileError):
        decode_matrix(bytes(blob))


def test_version_mismatch():
    blob = bytearray(encode_matrix(np.ones((2, 2))))
    struct.pack_into("<I", blob, 4, MATRIX_FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatchError):
        decode_matrix(bytes(blob))


@pytest.mark.parametrize("cut", [3, 24, 40])
def test_short_payload_is_corrupt(cut):
    with pytest.raises(CorruptFileError):
        decode_matrix(encode_matrix(np.ones((2, 3)))[:cut])


def test_csv_and_binary_agree(tmp_path):
    m = np.random.default_rng(1).standard_normal((5, 3)) * 1e3
    write_matrix(tmp_path / "m.esmx", m)
    write_csv_matrix(tmp_path / "m.csv", m)
    a, b = load_matrix_any(tmp_path / "m.esmx"), load_matrix_any(tmp_path / "m.csv")
    np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)


@pytest.mark.parametrize("text", ["x0,x1\n", "x0,x1\n1,2\n3\n", "x0\nfoo\n"])
def test_bad_csv_is_corrupt(tmp_path, text):
    path = tmp_path / "m.csv"
    path.write_text(text)
    with pytest.raises(CorruptFileError):
        read_csv_matrix(path)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_json_floats_round_trip(x):
    assert json.loads(dumps({"x": x}))["x"] == x


def test_json_formatting_rules():
    doc = json.loads(dumps({"a": 0.0, "b": 2, "c": math.inf, "d": [1.5, math.nan], "e": np.float64(0.1)}))
    assert doc == {"a": 0.0, "b": 2, "c": None, "d": [1.5, None], "e": 0.1}
    assert isinstance(doc["a"], float) and isinstance(doc["b"], int)
    assert "0.10000000000000001" in dumps(0.1)


def test_json_preserves_key_order():
    text = dumps({"z": 1, "a": 2})
    assert text.index('"z"') < text.index('"a"')


def test_json_rejects_unknown_types():
    with pytest.raises(TypeError):
        dumps({"x": object()})
