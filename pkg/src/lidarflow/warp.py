"""Forward (splat) warping of images along a motion field.

Images are float32 numpy arrays of shape (H, W) or (H, W, C) with samples
in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch
from .motion import MotionField, round_half_up


@dataclass(eq=False)
class WarpedImage:
    image: np.ndarray
    coverage: np.ndarray

    @property
    def hole_count(self):
        return int(self.coverage.size - np.count_nonzero(self.coverage))

    @property
    def coverage_ratio(self):
        return float(np.count_nonzero(self.coverage)) / self.coverage.size


def as_image(img):
    a = np.asarray(img, dtype=np.float32)
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (1, 3)):
        raise DimensionMismatch(f"expected an (H, W) or (H, W, 1|3) image, got {a.shape}")
    return a


def _check_dims(img, field):
    if img.shape[:2] != field.shape:
        raise DimensionMismatch(f"image {img.shape[:2]} does not match field {field.shape}")


def _splat_targets(field: MotionField):
    """Source linear index, destination linear index and depth of every in-bounds splat."""
    h, w = field.shape
    src = np.flatnonzero(field.valid.reshape(-1))
    sy, sx = np.divmod(src, w)
    dx = round_half_up(sx + field.du.reshape(-1)[src])
    dy = round_half_up(sy + field.dv.reshape(-1)[src])
    inb = (dx >= 0) & (dx < w) & (dy >= 0) & (dy < h)
    src = src[inb]
    dest = dy[inb] * w + dx[inb]
    return src, dest, field.depth.reshape(-1)[src]


def forward_warp(src: np.ndarray, field: MotionField, backend=None) -> WarpedImage:
    """Splat every valid source pixel to its rounded destination.

    Collisions go to the smaller source depth, then the smaller source
    index. Destinations nobody lands on are holes with value 0.
    """
    img = as_image(src)
    _check_dims(img, field)
    h, w = field.shape
    s, dest, depth = _splat_targets(field)
    winner = kernels.get_backend(backend).zbuffer_select(dest, depth, s, h * w)
    covered = winner >= 0
    flat = img.reshape(h * w, -1)
    out = np.zeros_like(flat)
    out[covered] = flat[s[winner[covered]]]
    return WarpedImage(out.reshape(img.shape), covered.reshape(h, w))


def occlusion_mask(field: MotionField) -> np.ndarray:
    """Destinations where two or more sources collided during forward warping."""
    h, w = field.shape
    _, dest, _ = _splat_targets(field)
    return (np.bincount(dest, minlength=h * w) >= 2).reshape(h, w)


def compensate(src: np.ndarray, field: MotionField, fallback: np.ndarray | None = None) -> np.ndarray:
    """Forward-warp ``src`` and fill holes from ``fallback`` (default: ``src`` itself)."""
    img = as_image(src)
    fb = img if fallback is None else as_image(fallback)
    if fb.shape != img.shape:
        raise DimensionMismatch(f"fallback {fb.shape} does not match source {img.shape}")
    warped = forward_warp(img, field)
    cov = warped.coverage if img.ndim == 2 else warped.coverage[..., None]
    return np.where(cov, warped.image, fb)
