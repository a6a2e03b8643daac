"""Rigid transforms, point clouds and the pinhole projection chain.

Conventions: a transform ``T_ab`` maps point coordinates expressed in frame
``b`` into frame ``a`` (``p_a = R p_b + t``). Cameras look down +z with x
to the right and y down. All geometry is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

Z_MIN = 0.1  # near-plane cutoff in meters

_ORTHO_TOL = 1e-9


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def nearest_rotation(R):
    """Project a 3x3 matrix onto SO(3) (SVD polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


class RigidTransform:
    """4x4 homogeneous SE(3) transform, immutable.

    ``check=True`` enforces the rotation block to be orthonormal with unit
    determinant (to 1e-9) and the bottom row to be exactly ``[0, 0, 0, 1]``.
    """

    __slots__ = ("m",)

    def __init__(self, m, check=True):
        m = _readonly(m)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {m.shape}")
        if check:
            if not np.all(np.isfinite(m)):
                raise ValueError("transform has non-finite entries")
            if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
                raise ValueError("bottom row must be [0, 0, 0, 1]")
            R = m[:3, :3]
            if np.abs(R.T @ R - np.eye(3)).max() >= _ORTHO_TOL:
                raise ValueError("rotation block is not orthonormal")
            if abs(np.linalg.det(R) - 1.0) >= _ORTHO_TOL:
                raise ValueError("rotation block must have det = +1")
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @classmethod
    def identity(cls):
        return cls(np.eye(4), check=False)

    @classmethod
    def from_rt(cls, R, t, orthonormalize=False):
        R = np.asarray(R, dtype=np.float64).reshape(3, 3)
        if orthonormalize:
            R = nearest_rotation(R)
        m = np.eye(4)
        m[:3, :3] = R
        m[:3, 3] = np.asarray(t, dtype=np.float64).reshape(3)
        return cls(m)

    @classmethod
    def translation(cls, x, y, z):
        m = np.eye(4)
        m[:3, 3] = (x, y, z)
        return cls(m, check=False)

    @classmethod
    def rotation(cls, axis, angle):
        """Right-handed (active) rotation by ``angle`` radians about ``axis``."""
        return cls.from_rt(axis_angle_matrix(axis, angle), np.zeros(3))

    @property
    def R(self):
        return self.m[:3, :3]

    @property
    def t(self):
        return self.m[:3, 3]

    def apply(self, points):
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t

    def __matmul__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return compose(self, other)

    def __eq__(self, other):
        return isinstance(other, RigidTransform) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())

    def allclose(self, other, atol=1e-9):
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def rotation_angle(self):
        """Geodesic rotation angle in radians."""
        c = (np.trace(self.R) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def to_list(self):
        return self.m.tolist()

    def __repr__(self):
        return f"RigidTransform(R={self.R.tolist()}, t={self.t.tolist()})"


def axis_angle_matrix(axis, angle):
    """Rodrigues' formula."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    k = axis / n
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    m = a.m @ b.m
    m[3] = (0.0, 0.0, 0.0, 1.0)
    return RigidTransform(m, check=False)


def inverse(a: RigidTransform) -> RigidTransform:
    Rt = a.R.T
    m = np.eye(4)
    m[:3, :3] = Rt
    m[:3, 3] = -Rt @ a.t
    return RigidTransform(m, check=False)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def projection(self):
        """3x4 projection matrix ``K [I | 0]``."""
        return np.hstack([self.matrix, np.zeros((3, 1))])

    def scaled(self, factor):
        """Intrinsics of the image downsampled by an integer ``factor``.

        Downsampling keeps every ``factor``-th pixel, so low-res pixel ``x``
        is high-res pixel ``factor * x``.
        """
        return CameraIntrinsics(
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=self.cx / factor,
            cy=self.cy / factor,
            width=self.width // factor,
            height=self.height // factor,
        )

    def unproject(self, u, v, depth):
        u, v, depth = (np.asarray(a, dtype=np.float64) for a in (u, v, depth))
        x = (u - self.cx) / self.fx * depth
        y = (v - self.cy) / self.fy * depth
        return np.stack([x, y, depth], axis=-1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points in meters with reflectance in [0, 1]."""

    points: np.ndarray
    intensity: np.ndarray = None
    timestamp: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.intensity is None:
            inten = np.zeros(len(pts))
        else:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if len(inten) != len(pts):
            raise ValueError("intensity length must equal the number of points")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "intensity", _readonly(inten))

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, timestamp=0.0):
        return cls(np.zeros((0, 3)), np.zeros(0), timestamp)

    @staticmethod
    def concatenate(clouds, timestamp=None):
        clouds = list(clouds)
        if not clouds:
            return PointCloud.empty(timestamp or 0.0)
        ts = clouds[0].timestamp if timestamp is None else timestamp
        return PointCloud(
            np.concatenate([c.points for c in clouds]),
            np.concatenate([c.intensity for c in clouds]),
            ts,
        )


class PixelPoint(NamedTuple):
    u: float
    v: float
    depth: float
    source_index: int


@dataclass(frozen=True)
class Projection:
    """Column-wise result of :func:`project`; iterating yields PixelPoints."""

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    source_index: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.u)

    def __iter__(self) -> Iterator[PixelPoint]:
        for i in range(len(self.u)):
            yield PixelPoint(
                float(self.u[i]), float(self.v[i]), float(self.depth[i]), int(self.source_index[i])
            )

    def __getitem__(self, i):
        return PixelPoint(
            float(self.u[i]), float(self.v[i]), float(self.depth[i]), int(self.source_index[i])
        )


def transform_cloud(T: RigidTransform, pc: PointCloud) -> PointCloud:
    return PointCloud(T.apply(pc.points), pc.intensity, pc.timestamp)


def pinhole(K: CameraIntrinsics, xyz):
    """Perspective division without filtering: returns (u, v, z)."""
    xyz = np.asarray(xyz, dtype=np.float64)
    z = xyz[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * xyz[:, 0] / z + K.cx
        v = K.fy * xyz[:, 1] / z + K.cy
    return u, v, z


def in_image(K: CameraIntrinsics, u, v):
    return (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)


def project(K: CameraIntrinsics, pc_cam: PointCloud, z_min=Z_MIN) -> Projection:
    """Project camera-frame points; drop points behind ``z_min`` or off-image.

    Output order follows input order.
    """
    u, v, z = pinhole(K, pc_cam.points)
    keep = z > z_min
    keep[keep] &= in_image(K, u[keep], v[keep])
    idx = np.flatnonzero(keep)
    return Projection(u[idx], v[idx], z[idx], idx)


def conjugate(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """``A B A^-1``: re-express the motion ``B`` in the frame ``A`` maps into.

    An exact identity ``B`` returns an exact identity.
    """
    if np.array_equal(B.m, np.eye(4)):
        return RigidTransform.identity()
    return compose(compose(A, B), inverse(A))
