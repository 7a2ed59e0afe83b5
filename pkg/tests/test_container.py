import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from normform.container import (MAGIC, canonical_json, config_hash, read_container, read_header,
                                write_container)


def test_round_trip_preserves_shape_and_order(tmp_path):
    arrays = {"a": np.arange(12.0).reshape(3, 4), "b": np.array([1.5]), "c": np.zeros((2, 0))}
    write_container(tmp_path / "x", {"note": "hi"}, arrays)
    header, back = read_container(tmp_path / "x")
    assert header["note"] == "hi" and header["schema_version"] == 1
    for k, v in arrays.items():
        np.testing.assert_array_equal(back[k], v)
    assert read_header(tmp_path / "x")["arrays"][0]["name"] == "a"


def test_payload_is_column_major(tmp_path):
    write_container(tmp_path / "x", {}, {"m": np.array([[1.0, 2.0], [3.0, 4.0]])})
    raw = (tmp_path / "x").read_bytes()
    assert raw.startswith(MAGIC)
    np.testing.assert_array_equal(np.frombuffer(raw[-32:], "<f8"), [1.0, 3.0, 2.0, 4.0])


def test_rejects_foreign_files(tmp_path):
    (tmp_path / "x").write_bytes(b"garbage-bytes")
    with pytest.raises(ValueError):
        read_container(tmp_path / "x")


def test_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    with pytest.raises(ValueError):
        canonical_json({"a": float("nan")})


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_arbitrary_arrays_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("c") / "x"
    write_container(path, {}, {"arr": arr})
    np.testing.assert_array_equal(read_container(path)[1]["arr"], arr)
