"""Classical motion-compensated multi-frame enhancement.

Three backends consume motion fields that map every frame of a window onto
its center frame: temporal averaging (denoise), shift-and-add
super-resolution and a sharpest-tile fusion used as a deblurring stand-in.
Frames are float arrays of shape (H, W) or (H, W, C) in [0, 1]; every
backend returns float32 clipped to [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DimensionMismatch, WindowTooSmall
from .metrics import to_luma
from .motion import MergeSpec, MotionField, PatchSpec, Variant, motion_between, round_half_up
from .warp import as_image, compensate, forward_warp, occlusion_mask


class TaskKind(enum.Enum):
    DENOISE = "denoise"
    SUPERRES = "superres"
    DEBLUR_PROXY = "deblur_proxy"

    @classmethod
    def parse(cls, text):
        key = str(getattr(text, "value", text)).lower().replace("-", "_")
        aliases = {"sr": "superres", "deblur": "deblur_proxy"}
        return cls(aliases.get(key, key))


MIN_WINDOW = {TaskKind.DENOISE: 1, TaskKind.SUPERRES: 1, TaskKind.DEBLUR_PROXY: 3}


@dataclass(frozen=True)
class EnhanceTask:
    kind: TaskKind = TaskKind.DENOISE
    window: int = 5
    sr_factor: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind.parse(self.kind))
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 1, got {self.window}")
        if self.window < MIN_WINDOW[self.kind]:
            raise WindowTooSmall(
                f"{self.kind.value} needs a window of at least {MIN_WINDOW[self.kind]}, got {self.window}"
            )
        if int(self.sr_factor) != self.sr_factor or self.sr_factor < 1:
            raise ValueError(f"sr_factor must be an integer >= 1, got {self.sr_factor}")

    @property
    def patch(self) -> PatchSpec:
        return PatchSpec.for_task(self.kind)

    @property
    def factor(self):
        return self.sr_factor if self.kind is TaskKind.SUPERRES else 1


def _check_window(frames, fields, center, minimum):
    if len(frames) < minimum:
        raise WindowTooSmall(f"need at least {minimum} frames, got {len(frames)}")
    if len(fields) != len(frames):
        raise DimensionMismatch(f"{len(frames)} frames but {len(fields)} fields")
    if not 0 <= center < len(frames):
        raise WindowTooSmall(f"center {center} outside window of {len(frames)}")
    imgs = [as_image(f) for f in frames]
    shape = imgs[center].shape
    for img in imgs:
        if img.shape != shape:
            raise DimensionMismatch(f"frame {img.shape} differs from center {shape}")
    return imgs


def _neighbors(n, center):
    return [j for j in range(n) if j != center]


def _finish(out):
    return np.clip(np.nan_to_num(out, nan=0.0), 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# denoise
# ---------------------------------------------------------------------------


def denoise_temporal(frames, fields, center: int) -> np.ndarray:
    """Mean of the center frame and its motion-compensated neighbors.

    A neighbor contributes only where its warp covered the pixel and no
    splat collision happened there; the center frame always contributes.
    """
    imgs = _check_window(frames, fields, center, 1)
    ref = imgs[center]
    total = ref.astype(np.float64)
    count = np.ones(ref.shape[:2])
    for j in _neighbors(len(imgs), center):
        warped = forward_warp(imgs[j], fields[j])
        use = warped.coverage & ~occlusion_mask(fields[j])
        w = use if ref.ndim == 2 else use[..., None]
        total += np.where(w, warped.image, 0.0)
        count += use
    if ref.ndim == 3:
        count = count[..., None]
    return _finish(total / count)


# ---------------------------------------------------------------------------
# super-resolution
# ---------------------------------------------------------------------------


def upsample_bicubic(img, factor: int) -> np.ndarray:
    """Cubic-spline upsampling; high-res pixel ``X`` samples low-res coordinate ``X / factor``."""
    img = as_image(img).astype(np.float64)
    h, w = img.shape[:2]
    ys = np.arange(h * factor) / factor
    xs = np.arange(w * factor) / factor
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    if img.ndim == 2:
        return ndimage.map_coordinates(img, [yy, xx], order=3, mode="nearest")
    chans = [ndimage.map_coordinates(img[..., c], [yy, xx], order=3, mode="nearest")
             for c in range(img.shape[2])]
    return np.stack(chans, axis=-1)


def superres_shift_add(frames, fields, center: int, factor: int, backend=None) -> np.ndarray:
    """Shift-and-add onto a ``factor``-times finer grid.

    Low-res pixel ``x`` of frame j lands at high-res ``(x + du) f`` rounded
    to the nearest cell; collisions within one frame keep the nearer
    surface. Cells are averaged over their hits; cells nobody hits take the
    cubic upsample of the center frame.
    """
    imgs = _check_window(frames, fields, center, 1)
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    ref = imgs[center]
    h, w = ref.shape[:2]
    H, W = h * factor, w * factor
    chans = 1 if ref.ndim == 2 else ref.shape[2]
    acc = np.zeros((H * W, chans))
    hits = np.zeros(H * W)
    impl = kernels.get_backend(backend)
    ys, xs = np.divmod(np.arange(h * w), w)
    for j, img in enumerate(imgs):
        if j == center:
            valid = np.ones(h * w, bool)
            du = dv = np.zeros(h * w)
            depth = np.zeros(h * w)
        else:
            f = fields[j]
            if f.shape != (h, w):
                raise DimensionMismatch(f"field {f.shape} does not match frames {(h, w)}")
            valid = f.valid.reshape(-1)
            du, dv, depth = f.du.reshape(-1), f.dv.reshape(-1), f.depth.reshape(-1)
        X = round_half_up((xs + du) * factor)
        Y = round_half_up((ys + dv) * factor)
        ok = valid & (X >= 0) & (X < W) & (Y >= 0) & (Y < H)
        src = np.flatnonzero(ok)
        dest = Y[src] * W + X[src]
        winner = impl.zbuffer_select(dest, depth[src], src, H * W)
        got = winner >= 0
        acc[got] += img.reshape(h * w, chans)[src[winner[got]]]
        hits[got] += 1
    base = upsample_bicubic(ref, factor).reshape(H * W, chans)
    out = np.where(hits[:, None] > 0, acc / np.maximum(hits, 1)[:, None], base)
    return _finish(out.reshape((H, W) if ref.ndim == 2 else (H, W, chans)))


# ---------------------------------------------------------------------------
# deblur proxy
# ---------------------------------------------------------------------------


def laplacian_energy(img) -> float:
    """Mean squared Laplacian of the luma channel."""
    lap = ndimage.laplace(to_luma(img), mode="nearest")
    return float(np.mean(lap * lap))


def _tile_energy(img, tile):
    lap = ndimage.laplace(to_luma(img), mode="nearest")
    e = lap * lap
    h, w = e.shape
    th, tw = -(-h // tile), -(-w // tile)
    pad = np.zeros((th * tile, tw * tile))
    pad[:h, :w] = e
    return pad.reshape(th, tile, tw, tile).sum(axis=(1, 3))


def deblur_proxy(frames, fields, center: int, tile: int = 8, feather: int = 4) -> np.ndarray:
    """Per tile, take whichever aligned frame is sharpest; feather tile seams.

    Neighbors are compensated onto the center frame with the center as
    hole fill. Each ``tile`` x ``tile`` block picks the candidate with the
    largest Laplacian energy (ties favor the center); the one-hot choices
    are box-filtered over ``2 * feather + 1`` pixels before blending.
    """
    imgs = _check_window(frames, fields, center, 3)
    ref = imgs[center].astype(np.float64)
    h, w = ref.shape[:2]
    order = [center] + _neighbors(len(imgs), center)
    cands = [ref] + [
        compensate(imgs[j], fields[j], fallback=imgs[center]).astype(np.float64) for j in order[1:]
    ]
    energy = np.stack([_tile_energy(c, tile) for c in cands])
    choice = np.argmax(energy, axis=0)
    choice = np.repeat(np.repeat(choice, tile, axis=0), tile, axis=1)[:h, :w]
    out = ref.copy()
    for i in range(1, len(cands)):
        wgt = ndimage.uniform_filter((choice == i).astype(np.float64), 2 * feather + 1, mode="nearest")
        if ref.ndim == 3:
            wgt = wgt[..., None]
        out += wgt * (cands[i] - ref)
    return _finish(out)


# ---------------------------------------------------------------------------
# sequence driver
# ---------------------------------------------------------------------------


def window_indices(n_frames, t, window):
    """Frame indices of a window centered on ``t``, shrunk symmetrically at the ends."""
    half = min(window // 2, t, n_frames - 1 - t)
    return list(range(t - half, t + half + 1))


def fields_to_center(ctx, indices, center, variant=Variant.MPC_IMU, merge=MergeSpec(),
                     patch=PatchSpec(), zero_motion=False, K=None):
    """Motion field of every frame in ``indices`` onto ``center`` (None for the center)."""
    K = K or ctx.K
    out = []
    for j in indices:
        if j == center:
            out.append(None)
        elif zero_motion:
            out.append(MotionField.uniform(K.width, K.height))
        else:
            out.append(motion_between(ctx, j, center, variant, merge, patch, K))
    return out


def run_task(task: EnhanceTask, frames, fields, center):
    if task.kind is TaskKind.DENOISE:
        return denoise_temporal(frames, fields, center)
    if task.kind is TaskKind.SUPERRES:
        return superres_shift_add(frames, fields, center, task.sr_factor)
    return deblur_proxy(frames, fields, center)


def enhance_with_fields(ctx, frames, t, task: EnhanceTask, variant=Variant.MPC_IMU,
                        merge=MergeSpec(), patch: PatchSpec | None = None, zero_motion=False):
    """Enhance frame ``t`` of ``frames`` using motion from ``ctx``; also return the fields.

    The window shrinks at the sequence ends; a deblur window that shrinks
    below three frames returns the frame unchanged (superres: upsampled).
    """
    idx = window_indices(len(frames), t, task.window)
    if len(idx) < MIN_WINDOW[task.kind]:
        img = as_image(frames[t])
        if task.kind is TaskKind.SUPERRES:
            return _finish(upsample_bicubic(img, task.sr_factor)), [None]
        return _finish(img), [None]
    patch = patch or task.patch
    fields = fields_to_center(ctx, idx, t, variant, merge, patch, zero_motion)
    return run_task(task, [frames[j] for j in idx], fields, idx.index(t)), fields


def enhance_frame(ctx, frames, t, task: EnhanceTask, variant=Variant.MPC_IMU,
                  merge=MergeSpec(), patch: PatchSpec | None = None, zero_motion=False):
    """Enhanced frame ``t`` (see :func:`enhance_with_fields`)."""
    return enhance_with_fields(ctx, frames, t, task, variant, merge, patch, zero_motion)[0]
