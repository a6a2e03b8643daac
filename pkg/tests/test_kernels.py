import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarflow import _pykernels, kernels
from lidarflow.egomotion import VoxelGrid

from conftest import random_transform

compiled = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="extension not built")
seeds = st.integers(0, 2**32 - 1)


def test_backend_selection():
    assert kernels.BACKEND in kernels.BACKENDS
    assert kernels.get_backend("python") is _pykernels
    assert kernels.get_backend() is kernels.BACKENDS[kernels.BACKEND]


def test_pure_python_switch():
    env = dict(os.environ, LIDARFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import lidarflow.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_zbuffer_rules():
    lin = np.array([3, 3, 3, 0, 5])
    depth = np.array([2.0, 1.0, 1.0, 9.0, 4.0])
    key = np.array([0, 7, 4, 1, 2])
    for impl in kernels.BACKENDS.values():
        w = impl.zbuffer_select(lin, depth, key, 6)
        assert w.tolist() == [3, -1, -1, 2, -1, 4]
        assert impl.zbuffer_select(np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64), 2).tolist() == [-1, -1]


@compiled
@given(seeds)
@settings(max_examples=40, deadline=None)
def test_zbuffer_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n, npix = 500, 60
    lin = rng.integers(0, npix, n)
    depth = rng.choice([1.0, 2.0, 3.0], n)
    key = rng.permutation(n)
    a = kernels.BACKENDS["python"].zbuffer_select(lin, depth, key, npix)
    b = kernels.BACKENDS["cython"].zbuffer_select(lin, depth, key, npix)
    np.testing.assert_array_equal(a, b)


@compiled
@given(seeds, st.sampled_from([1, 3, 5, 7]))
@settings(max_examples=30, deadline=None)
def test_patch_spread_backends_agree(seed, k):
    rng = np.random.default_rng(seed)
    depth = rng.choice([1.0, 2.0, 4.0], (13, 17))
    valid = rng.random((13, 17)) < 0.2
    a = kernels.BACKENDS["python"].patch_spread(depth, valid, k)
    b = kernels.BACKENDS["cython"].patch_spread(depth, valid, k)
    np.testing.assert_array_equal(a, b)


@compiled
@given(seeds)
@settings(max_examples=30, deadline=None)
def test_grid_nearest_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, (300, 3))
    q = rng.uniform(-4, 4, (100, 3))
    grid = VoxelGrid(pts, 0.5)
    a = grid.nearest(q, 1.0, "python")
    b = grid.nearest(q, 1.0, "cython")
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@compiled
@given(seeds)
@settings(max_examples=30, deadline=None)
def test_project_anchor_backends_agree(seed):
    rng = np.random.default_rng(seed)
    A = random_transform(rng, 0.3, 1.0).m[:3]
    B = random_transform(rng, 0.3, 3.0).m[:3]
    pts = rng.uniform([-20, -10, -5], [20, 10, 40], (2000, 3))
    args = (pts, A, B, 120.0, 110.0, 47.5, 31.5, 96, 64, 0.1)
    a = kernels.BACKENDS["python"].project_anchor(*args)
    b = kernels.BACKENDS["cython"].project_anchor(*args)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
