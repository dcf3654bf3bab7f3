import struct

import numpy as np
import pytest

from polcoh.container import MAGIC, ContainerError, read_container, write_container


def _arrays():
    rng = np.random.default_rng(0)
    return {"psi": rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3)),
            "n": np.arange(5, dtype=np.int64), "x": np.linspace(0, 1, 4)}


def test_round_trip_and_layout(tmp_path):
    path = tmp_path / "a.pcz"
    write_container(path, "demo", {"b": 1.5, "a": [1, 2]}, _arrays())
    header, arr = read_container(path, expect_kind="demo")
    assert header["meta"] == {"a": [1, 2], "b": 1.5}
    for k, v in _arrays().items():
        np.testing.assert_array_equal(arr[k], v)
        assert arr[k].dtype == v.dtype
    raw = path.read_bytes()
    magic, version, reserved, hlen = struct.unpack("<8sIIQ", raw[:24])
    assert (magic, version, reserved) == (MAGIC, 1, 0)
    assert raw[24:24 + hlen].decode().startswith('{"blocks":')
    assert len(raw) == 24 + hlen + 6 * 16 + 5 * 8 + 4 * 8


def test_byte_identical_rewrite(tmp_path):
    write_container(tmp_path / "a", "demo", {"k": 1}, _arrays())
    _, arr = read_container(tmp_path / "a")
    write_container(tmp_path / "b", "demo", {"k": 1}, arr)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_big_endian_input_stored_little(tmp_path):
    x = np.arange(3, dtype=">f8")
    write_container(tmp_path / "a", "demo", {}, {"x": x})
    header, arr = read_container(tmp_path / "a")
    assert header["blocks"][0]["dtype"] == "<f8"
    np.testing.assert_array_equal(arr["x"], [0.0, 1.0, 2.0])


def test_errors(tmp_path):
    path = tmp_path / "a"
    write_container(path, "demo", {}, _arrays())
    with pytest.raises(ContainerError, match="expected"):
        read_container(path, expect_kind="other")
    raw = path.read_bytes()
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(ContainerError, match="truncated"):
        read_container(tmp_path / "short")
    (tmp_path / "magic").write_bytes(b"X" + raw[1:])
    with pytest.raises(ContainerError, match="magic"):
        read_container(tmp_path / "magic")
    (tmp_path / "tiny").write_bytes(raw[:10])
    with pytest.raises(ContainerError):
        read_container(tmp_path / "tiny")
    with pytest.raises(ValueError):
        write_container(tmp_path / "nan", "demo", {"x": float("nan")}, {})
