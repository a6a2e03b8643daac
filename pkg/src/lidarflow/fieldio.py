"""Motion field containers: the native LFMF format and Middlebury ``.flo``.

LFMF layout (little-endian)::

    b"LFMF" | u32 version | u32 width | u32 height
    du    f32[height*width]  row-major
    dv    f32[height*width]
    depth f32[height*width]  (+inf where invalid)
    valid u8[height*width]   0/1
"""

import io
import os
import struct
import tempfile

import numpy as np

from .errors import DecodeError, IoError, MissingFile
from .motion import MotionField

LFMF_MAGIC = b"LFMF"
LFMF_VERSION = 1
FLO_MAGIC = b"PIEH"  # float32 202021.25
FLO_UNKNOWN = 1e9
_HEADER = struct.Struct("<4sIII")


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


_FILE_MODE = 0o666 & ~_umask()


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory, then rename.

    The file gets the usual umask-derived mode rather than the private
    mode of the temp file.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, _FILE_MODE)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path):
    try:
        with open(path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        raise MissingFile(path) from None
    except OSError as e:
        raise IoError(f"{path}: {e}") from e


def lfmf_bytes(field: MotionField) -> bytes:
    h, w = field.shape
    out = io.BytesIO()
    out.write(_HEADER.pack(LFMF_MAGIC, LFMF_VERSION, w, h))
    for a in (field.du, field.dv, field.depth):
        out.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    out.write(field.valid.astype(np.uint8).tobytes())
    return out.getvalue()


def parse_lfmf(data: bytes, source="<bytes>") -> MotionField:
    if len(data) < _HEADER.size:
        raise DecodeError(f"{source}: truncated LFMF header")
    magic, version, w, h = _HEADER.unpack_from(data)
    if magic != LFMF_MAGIC:
        raise DecodeError(f"{source}: bad magic {magic!r}")
    if version != LFMF_VERSION:
        raise DecodeError(f"{source}: unsupported LFMF version {version}")
    n = w * h
    expected = _HEADER.size + 13 * n
    if len(data) != expected:
        raise DecodeError(f"{source}: expected {expected} bytes for {w}x{h}, got {len(data)}")
    off = _HEADER.size
    arrays = []
    for _ in range(3):
        arrays.append(np.frombuffer(data, "<f4", n, off).astype(np.float64).reshape(h, w))
        off += 4 * n
    valid = np.frombuffer(data, np.uint8, n, off).reshape(h, w)
    if np.any(valid > 1):
        raise DecodeError(f"{source}: validity bytes must be 0 or 1")
    return MotionField(arrays[0], arrays[1], arrays[2], valid.astype(bool))


def write_lfmf(field: MotionField, path):
    atomic_write_bytes(path, lfmf_bytes(field))


def read_lfmf(path) -> MotionField:
    return parse_lfmf(_read(path), source=os.fspath(path))


def flo_bytes(field: MotionField) -> bytes:
    h, w = field.shape
    uv = np.empty((h, w, 2), dtype="<f4")
    uv[..., 0] = np.where(field.valid, field.du, FLO_UNKNOWN)
    uv[..., 1] = np.where(field.valid, field.dv, FLO_UNKNOWN)
    return FLO_MAGIC + struct.pack("<ii", w, h) + uv.tobytes()


def parse_flo(data: bytes, source="<bytes>", depth=1.0) -> MotionField:
    """Decode ``.flo``; components >= 1e9 in magnitude mark invalid pixels.

    ``.flo`` carries no depth, so valid pixels get ``depth``.
    """
    if len(data) < 12 or data[:4] != FLO_MAGIC:
        raise DecodeError(f"{source}: not a .flo file")
    w, h = struct.unpack_from("<ii", data, 4)
    if w < 0 or h < 0 or len(data) != 12 + 8 * w * h:
        raise DecodeError(f"{source}: size mismatch for {w}x{h}")
    uv = np.frombuffer(data, "<f4", 2 * w * h, 12).reshape(h, w, 2).astype(np.float64)
    valid = (np.abs(uv[..., 0]) < FLO_UNKNOWN) & (np.abs(uv[..., 1]) < FLO_UNKNOWN)
    return MotionField(uv[..., 0], uv[..., 1], np.full((h, w), float(depth)), valid)


def write_flo(field: MotionField, path):
    atomic_write_bytes(path, flo_bytes(field))


def read_flo(path, depth=1.0) -> MotionField:
    return parse_flo(_read(path), source=os.fspath(path), depth=depth)
