import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarflow.errors import DecodeError, MissingFile
from lidarflow.fieldio import (
    FLO_UNKNOWN,
    atomic_write_bytes,
    flo_bytes,
    lfmf_bytes,
    parse_flo,
    parse_lfmf,
    read_flo,
    read_lfmf,
    write_flo,
    write_lfmf,
)
from lidarflow.motion import MotionField


def f32_field(rng, h, w, density=0.5):
    # values representable in float32 so the round trip can be exact
    cast = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
    return MotionField(cast(rng.normal(0, 5, (h, w))), cast(rng.normal(0, 5, (h, w))),
                       cast(rng.uniform(0.5, 80, (h, w))), rng.random((h, w)) < density)


@given(st.integers(0, 2**32 - 1), st.integers(0, 9), st.integers(0, 9))
@settings(max_examples=50, deadline=None)
def test_lfmf_round_trip_bit_exact(seed, h, w):
    f = f32_field(np.random.default_rng(seed), h, w)
    data = lfmf_bytes(f)
    assert len(data) == 16 + 13 * h * w
    back = parse_lfmf(data)
    assert back.equals(f)
    assert lfmf_bytes(back) == data


@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
@settings(max_examples=50, deadline=None)
def test_flo_round_trip_bit_exact(seed, h, w):
    f = f32_field(np.random.default_rng(seed), h, w)
    data = flo_bytes(f)
    back = parse_flo(data)
    np.testing.assert_array_equal(back.valid, f.valid)
    np.testing.assert_array_equal(back.du, f.du)
    np.testing.assert_array_equal(back.dv, f.dv)
    assert flo_bytes(back) == data


def test_flo_layout():
    f = MotionField(np.array([[1.5, 0.0]]), np.array([[-2.0, 0.0]]), np.ones((1, 2)), [[True, False]])
    data = flo_bytes(f)
    assert data[:4] == b"PIEH"
    assert struct.unpack("<f", data[:4])[0] == 202021.25
    assert struct.unpack("<ii", data[4:12]) == (2, 1)
    assert struct.unpack("<4f", data[12:]) == (1.5, -2.0, FLO_UNKNOWN, FLO_UNKNOWN)
    assert parse_flo(data, depth=7.0).depth[0, 0] == 7.0


def test_files_round_trip(tmp_path, rng):
    f = f32_field(rng, 6, 5)
    write_lfmf(f, tmp_path / "a.lfmf")
    assert read_lfmf(tmp_path / "a.lfmf").equals(f)
    write_flo(f, tmp_path / "a.flo")
    assert read_flo(tmp_path / "a.flo").valid.sum() == f.valid.sum()
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp")] == []
    with pytest.raises(MissingFile):
        read_lfmf(tmp_path / "none.lfmf")


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d[:10], "truncated"),
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + struct.pack("<I", 9) + d[8:], "version"),
    (lambda d: d + b"\0", "expected"),
    (lambda d: d[:-1] + b"\x02", "0 or 1"),
])
def test_lfmf_decode_errors(mutate, match, rng):
    data = lfmf_bytes(f32_field(rng, 2, 3))
    with pytest.raises(DecodeError, match=match):
        parse_lfmf(mutate(data))


def test_flo_decode_errors():
    with pytest.raises(DecodeError):
        parse_flo(b"PIEH")
    with pytest.raises(DecodeError):
        parse_flo(b"PIEH" + struct.pack("<ii", 2, 2) + b"\0" * 8)


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "x.bin"
    atomic_write_bytes(p, b"one")
    atomic_write_bytes(p, b"two")
    assert p.read_bytes() == b"two"
    assert sorted(q.name for q in tmp_path.iterdir()) == ["x.bin"]
    plain = tmp_path / "plain.bin"
    plain.write_bytes(b"")
    assert p.stat().st_mode & 0o777 == plain.stat().st_mode & 0o777
