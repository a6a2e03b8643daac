import numpy as np
import pytest
from scipy import ndimage
from hypothesis import given, settings, strategies as st

from lidarflow import kernels
from lidarflow.errors import DimensionMismatch
from lidarflow.metrics import psnr
from lidarflow.motion import MergeSpec, MotionField, PatchSpec, Variant, motion_between
from lidarflow.warp import compensate, forward_warp, occlusion_mask

from oracles import collision_counts

BACKENDS = sorted(kernels.BACKENDS)


def ramp(h=6, w=8, channels=None):
    img = (np.arange(h * w, dtype=np.float32).reshape(h, w) / (h * w))
    return img if channels is None else np.repeat(img[..., None], channels, axis=2)


def random_field(rng, h, w, density=0.6, scale=3.0):
    valid = rng.random((h, w)) < density
    return MotionField(rng.normal(0, scale, (h, w)), rng.normal(0, scale, (h, w)),
                       rng.uniform(1, 20, (h, w)), valid)


@pytest.mark.parametrize("channels", [None, 3])
def test_zero_field_is_identity(channels):
    img = ramp(channels=channels)
    out = forward_warp(img, MotionField.uniform(8, 6))
    assert out.hole_count == 0 and out.coverage_ratio == 1.0
    np.testing.assert_array_equal(out.image, img)


def test_uniform_shift_right():
    img = ramp()
    out = forward_warp(img, MotionField.uniform(8, 6, du=1.0))
    np.testing.assert_array_equal(out.image[:, 1:], img[:, :-1])
    assert not out.coverage[:, 0].any() and out.coverage[:, 1:].all()
    assert np.all(out.image[:, 0] == 0)
    assert out.hole_count == 6


def test_collision_keeps_nearer_source():
    img = np.array([[0.2, 0.8, 0.5]], np.float32)
    du = np.array([[1.0, 0.0, -1.0]])
    depth = np.array([[5.0, 2.0, 2.0]])
    f = MotionField(du, du * 0, depth, np.ones((1, 3), bool))
    out = forward_warp(img, f)
    # three sources land on the middle pixel; depths 2 tie, smaller index (1) wins
    assert out.image[0, 1] == np.float32(0.8)
    assert occlusion_mask(f).tolist() == [[False, True, False]]


def test_occlusion_mask_cases():
    assert not occlusion_mask(MotionField.uniform(5, 4)).any()
    valid = np.zeros((1, 4), bool)
    valid[0, :2] = True
    f = MotionField(np.array([[2.0, 1.0, 0, 0]]), np.zeros((1, 4)), np.ones((1, 4)), valid)
    assert occlusion_mask(f).tolist() == [[False, False, True, False]]


def test_compensate_cases():
    img = ramp()
    np.testing.assert_array_equal(compensate(img, MotionField.uniform(8, 6)), img)
    fb = np.full_like(img, 0.25)
    np.testing.assert_array_equal(compensate(img, MotionField.empty(8, 6), fallback=fb), fb)
    with pytest.raises(DimensionMismatch):
        compensate(img, MotionField.empty(8, 6), fallback=np.zeros((2, 2)))


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        forward_warp(ramp(), MotionField.uniform(5, 5))
    with pytest.raises(DimensionMismatch):
        forward_warp(np.zeros((4, 4, 2)), MotionField.uniform(4, 4))


@given(st.integers(0, 2**32 - 1), st.sampled_from([None, 3]))
@settings(max_examples=50, deadline=None)
def test_warp_properties(seed, channels):
    rng = np.random.default_rng(seed)
    h, w = 12, 15
    img = rng.random((h, w) if channels is None else (h, w, channels)).astype(np.float32)
    f = random_field(rng, h, w)
    outs = [forward_warp(img, f, backend=b) for b in BACKENDS]
    out = outs[0]
    for o in outs[1:]:
        np.testing.assert_array_equal(o.image, out.image)
    # coverage equals the number of distinct destinations
    counts = collision_counts(f)
    assert out.coverage.sum() == len(counts)
    assert out.hole_count == h * w - len(counts)
    # covered samples are copies of source samples; holes are zero
    src_vals = {tuple(np.atleast_1d(v)) for v in img.reshape(h * w, -1)}
    for v in out.image[out.coverage].reshape(-1, 1 if channels is None else channels):
        assert tuple(v) in src_vals
    assert not out.image[~out.coverage].any()
    # occlusion mask equals the brute-force collision counter
    expected = np.zeros((h, w), bool)
    for (r, c), n in counts.items():
        expected[r, c] = n >= 2
    np.testing.assert_array_equal(occlusion_mask(f), expected)
    comp = compensate(img, f)
    assert comp.shape == img.shape and np.all((comp >= 0) & (comp <= 1))


def test_dense_warp_predicts_next_frame(seq):
    ctx = seq.context()
    t = 4
    f = motion_between(ctx, t, t + 1, Variant.MPC_IMU, MergeSpec(5), PatchSpec(3))
    out = forward_warp(seq.frames[t], f)
    cov = out.coverage
    nxt = seq.frames[t + 1]
    warped_psnr = psnr(out.image[cov], nxt[cov])
    base_psnr = psnr(seq.frames[t], nxt)
    assert warped_psnr >= base_psnr + 3.0


def test_compensation_reduces_error(seq):
    t = 5
    f = seq.gt_field(t - 1, t)
    prev, cur = seq.frames[t - 1], seq.frames[t]
    comp = compensate(prev, f)
    assert np.abs(comp - cur).mean() < np.abs(prev - cur).mean()


@pytest.mark.parametrize("t", [2, 4, 6])
def test_occlusions_sit_on_depth_edges(seq, t):
    f = seq.gt_field(t, t + 1)
    occ = occlusion_mask(f)
    assert occ.any()
    logd = np.log(np.where(f.valid, f.depth, 1e3))
    edge = ndimage.maximum_filter(logd, 5) - ndimage.minimum_filter(logd, 5) > 0.2
    on_edge = (occ & edge).sum() / occ.sum()
    assert on_edge >= 0.6 and on_edge >= 3 * edge.mean()
    counts = collision_counts(f)
    assert occ.sum() == sum(1 for n in counts.values() if n >= 2)
