"""8-bit PNG input/output for float images in [0, 1]."""

import io
import os

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from ..errors import DecodeError, IoError, MissingFile
from ..fieldio import atomic_write_bytes


def decode_image(data: bytes, source="<bytes>") -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode in ("L", "P", "1", "I", "I;16"):
                if im.mode in ("I", "I;16"):
                    raise DecodeError(f"{source}: 16-bit images are not supported")
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"{source}: {e}") from e
    return arr.astype(np.float32) / np.float32(255.0)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG into float32 samples in [0, 1] (H, W) or (H, W, 3)."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise MissingFile(path, "image") from None
    except OSError as e:
        raise IoError(f"{path}: {e}") from e
    return decode_image(data, os.fspath(path))


def to_uint8(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_png(img) -> bytes:
    buf = io.BytesIO()
    # fixed compression settings keep output bytes reproducible
    PILImage.fromarray(to_uint8(img)).save(buf, format="PNG", compress_level=6, optimize=False)
    return buf.getvalue()


def write_image(img, path):
    """Write samples rounded to the nearest 8-bit level."""
    try:
        atomic_write_bytes(path, encode_png(img))
    except OSError as e:
        raise IoError(f"{path}: {e}") from e
