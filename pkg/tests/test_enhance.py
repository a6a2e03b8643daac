import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from lidarflow.enhance import (
    EnhanceTask,
    TaskKind,
    deblur_proxy,
    denoise_temporal,
    enhance_frame,
    enhance_with_fields,
    laplacian_energy,
    superres_shift_add,
    upsample_bicubic,
    window_indices,
)
from lidarflow.errors import DimensionMismatch, WindowTooSmall
from lidarflow.metrics import psnr
from lidarflow.motion import MotionField

from conftest import synthetic


def texture(rng, h=48, w=64, sigma=1.2):
    img = ndimage.gaussian_filter(rng.random((h, w)), sigma)
    return ((img - img.min()) / (img.max() - img.min())).astype(np.float32)


def zero_fields(n, h, w, center):
    return [None if j == center else MotionField.uniform(w, h) for j in range(n)]


# --- task spec ----------------------------------------------------------------


def test_task_validation():
    assert EnhanceTask("sr").kind is TaskKind.SUPERRES
    assert EnhanceTask("deblur").patch.patch == 7
    assert EnhanceTask("superres", sr_factor=3).factor == 3
    assert EnhanceTask("denoise", sr_factor=3).factor == 1
    with pytest.raises(ValueError):
        EnhanceTask("denoise", window=4)
    with pytest.raises(WindowTooSmall):
        EnhanceTask("deblur_proxy", window=1)
    with pytest.raises(ValueError):
        EnhanceTask("superres", sr_factor=0)
    with pytest.raises(ValueError):
        EnhanceTask("sharpen")


def test_window_indices_shrink_symmetrically():
    assert window_indices(9, 4, 5) == [2, 3, 4, 5, 6]
    assert window_indices(9, 1, 5) == [0, 1, 2]
    assert window_indices(9, 8, 5) == [8]
    assert window_indices(1, 0, 7) == [0]


def test_window_checks(rng):
    img = texture(rng)
    with pytest.raises(DimensionMismatch):
        denoise_temporal([img, img], [None], 0)
    with pytest.raises(DimensionMismatch):
        denoise_temporal([img, img[:10]], zero_fields(2, 48, 64, 0), 0)
    with pytest.raises(WindowTooSmall):
        deblur_proxy([img, img], zero_fields(2, 48, 64, 0), 0)


# --- denoise ------------------------------------------------------------------


def test_denoise_identical_frames_is_exact(rng):
    img = texture(rng)
    out = denoise_temporal([img] * 5, zero_fields(5, 48, 64, 2), 2)
    np.testing.assert_array_equal(out, img)


def test_denoise_window_one_is_input(rng):
    img = texture(rng)
    np.testing.assert_array_equal(denoise_temporal([img], [None], 0), img)


def test_denoise_averaging_reduces_variance(rng):
    sigma = 0.05
    frames = [np.float32(0.5) + rng.normal(0, sigma, (96, 128)).astype(np.float32) for _ in range(5)]
    out = denoise_temporal(frames, zero_fields(5, 96, 128, 2), 2)
    ratio = np.var(out - 0.5) / (sigma**2 / 5)
    assert 0.8 <= ratio <= 1.2


def test_denoise_skips_holes_and_collisions():
    center = np.full((1, 4), 0.2, np.float32)
    nb = np.full((1, 4), 0.6, np.float32)
    valid = np.array([[True, True, True, False]])
    du = np.array([[1.0, 0.0, 0.0, 0.0]])
    f = MotionField(du, du * 0, np.ones((1, 4)), valid)
    out = denoise_temporal([center, nb], [None, f], 0)
    # pixel 0: hole; pixel 1: two sources collide; pixel 2: clean; pixel 3: hole
    np.testing.assert_allclose(out, [[0.2, 0.2, 0.4, 0.2]], atol=1e-7)


# --- super-resolution -----------------------------------------------------------


def test_superres_factor_one_single_frame(rng):
    img = texture(rng)
    np.testing.assert_array_equal(superres_shift_add([img], [None], 0, 1), img)


def test_superres_identical_frames_equal_baseline(rng):
    img = texture(rng, 24, 32)
    out = superres_shift_add([img] * 3, zero_fields(3, 24, 32, 1), 1, 2)
    base = np.clip(upsample_bicubic(img, 2), 0, 1)
    np.testing.assert_allclose(out, base, atol=1e-6)
    # low-res samples sit on the even high-res grid
    np.testing.assert_array_equal(out[::2, ::2], img)


@pytest.mark.parametrize("seed", range(3))
def test_superres_beats_bicubic_with_known_shifts(seed):
    rng = np.random.default_rng(seed)
    hr = texture(rng, 130, 130)
    shifts = [(0, 0), (1, 0), (0, 1), (1, 1)]
    frames = [hr[sy : sy + 128 : 2, sx : sx + 128 : 2] for sx, sy in shifts]
    fields = [None] + [MotionField.uniform(64, 64, sx / 2, sy / 2) for sx, sy in shifts[1:]]
    gt = hr[:128, :128]
    out = superres_shift_add(frames, fields, 0, 2)
    base = np.clip(upsample_bicubic(frames[0], 2), 0, 1)
    inner = (slice(4, -4), slice(4, -4))
    assert psnr(out[inner], gt[inner]) >= psnr(base[inner], gt[inner]) + 1.0


def test_superres_rgb_shape(rng):
    img = np.stack([texture(rng, 16, 20)] * 3, axis=-1)
    assert superres_shift_add([img], [None], 0, 3).shape == (48, 60, 3)


# --- deblur proxy -----------------------------------------------------------------


def test_deblur_identical_frames(rng):
    img = texture(rng)
    out = deblur_proxy([img] * 3, zero_fields(3, 48, 64, 1), 1)
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_deblur_invalid_fields_return_center(rng):
    imgs = [texture(rng) for _ in range(3)]
    out = deblur_proxy(imgs, [MotionField.empty(64, 48), None, MotionField.empty(64, 48)], 1)
    np.testing.assert_allclose(out, imgs[1], atol=1e-6)


def test_deblur_recovers_sharpness(rng):
    sharp = texture(rng, sigma=0.8)
    blurred = ndimage.gaussian_filter(sharp, 1.5).astype(np.float32)
    out = deblur_proxy([sharp, blurred, sharp], zero_fields(3, 48, 64, 1), 1)
    assert laplacian_energy(out) >= 1.5 * laplacian_energy(blurred)


# --- sequence driver -------------------------------------------------------------


@given(st.sampled_from(list(TaskKind)), st.integers(0, 2**16))
@settings(max_examples=12, deadline=None)
def test_outputs_are_finite_and_in_range(kind, seed):
    rng = np.random.default_rng(seed)
    frames = [np.clip(texture(rng, 24, 32) + rng.normal(0, 0.3, (24, 32)), -0.5, 1.5) for _ in range(3)]
    fields = [MotionField(rng.normal(0, 2, (24, 32)), rng.normal(0, 2, (24, 32)),
                          rng.uniform(1, 9, (24, 32)), rng.random((24, 32)) < 0.5) for _ in range(3)]
    fields[1] = None
    if kind is TaskKind.DENOISE:
        out = denoise_temporal(frames, fields, 1)
    elif kind is TaskKind.SUPERRES:
        out = superres_shift_add(frames, fields, 1, 2)
    else:
        out = deblur_proxy(frames, fields, 1)
    assert out.dtype == np.float32 and np.all(np.isfinite(out))
    assert out.min() >= 0 and out.max() <= 1


def test_short_window_falls_back():
    s = synthetic(seed=1, frames=9)
    ctx = s.context()
    out, fields = enhance_with_fields(ctx, s.frames, 8, EnhanceTask("deblur_proxy", 3))
    np.testing.assert_array_equal(out, s.frames[8])
    assert fields == [None]


def test_estimated_motion_beats_zero_motion_for_denoise():
    s = synthetic(seed=0, frames=7, noise_sigma=0.1)
    ctx = s.context()
    task = EnhanceTask("denoise")
    ref = s.clean_frames[3]
    est = enhance_frame(ctx, s.frames, 3, task)
    zero = enhance_frame(ctx, s.frames, 3, task, zero_motion=True)
    assert psnr(est, ref) >= psnr(zero, ref) + 2.0
