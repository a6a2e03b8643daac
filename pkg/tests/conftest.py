from pathlib import Path

import numpy as np
import pytest

from lidarflow.dataio.synthetic import SyntheticSceneSpec, generate_synthetic
from lidarflow.geometry import CameraIntrinsics, RigidTransform, axis_angle_matrix

FIXTURES = Path(__file__).parent / "fixtures"

_CACHE = {}


def synthetic(**kw):
    """Session-cached synthetic sequence (generation takes seconds)."""
    key = tuple(sorted(kw.items()))
    if key not in _CACHE:
        _CACHE[key] = generate_synthetic(SyntheticSceneSpec(**kw))
    return _CACHE[key]


def random_transform(rng, max_angle=np.pi, max_trans=5.0):
    axis = rng.normal(size=3)
    R = axis_angle_matrix(axis, rng.uniform(-max_angle, max_angle))
    return RigidTransform.from_rt(R, rng.uniform(-max_trans, max_trans, 3))


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def seq():
    return synthetic(seed=1, frames=9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def K_small():
    return CameraIntrinsics(100.0, 100.0, 50.0, 40.0, 100, 80)
