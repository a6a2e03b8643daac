"""Motion fields from point clouds and egomotion, plus densification.

A point ``P*`` in the LiDAR frame lands at ``P_t = K(L P*)`` in frame t and
at ``P_{t+1} = K(E L P*)`` in frame t+1, where ``L`` is the LiDAR-to-camera
transform, ``E`` the camera egomotion and ``K`` the pinhole projection with
perspective division. The motion ``P_{t+1} - P_t`` is stored at the rounded
frame-t pixel; collisions keep the nearest point.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .egomotion import (
    EgomotionEstimate,
    chain_egomotion,
    integrate_imu,
    register_icp,
)
from .errors import DimensionMismatch, MissingNeighbor, MissingNeighborWarning
from .geometry import (
    Z_MIN,
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    conjugate,
    inverse,
    transform_cloud,
)

INVALID_DEPTH = np.inf


def round_half_up(x):
    """Nearest integer, halves rounded up (deterministic across backends)."""
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


@dataclass(eq=False)
class MotionField:
    """Per-pixel displacement frame t -> t+1 with validity and source depth.

    Invalid pixels hold the sentinel triple (0, 0, inf).
    """

    du: np.ndarray
    dv: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.valid = np.asarray(self.valid, dtype=bool)
        shape = self.valid.shape
        if len(shape) != 2:
            raise DimensionMismatch("motion field arrays must be 2-D")
        arrays = []
        for a in (self.du, self.dv, self.depth):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != shape:
                raise DimensionMismatch(f"array shape {a.shape} != mask shape {shape}")
            arrays.append(np.where(self.valid, a, 0.0))
        self.du, self.dv, depth = arrays
        self.depth = np.where(self.valid, depth, INVALID_DEPTH)

    @classmethod
    def _trusted(cls, du, dv, depth, valid):
        # caller guarantees float64/bool arrays of one shape with the sentinel already applied
        self = object.__new__(cls)
        self.du, self.dv, self.depth, self.valid = du, dv, depth, valid
        return self

    @property
    def height(self):
        return self.valid.shape[0]

    @property
    def width(self):
        return self.valid.shape[1]

    @property
    def shape(self):
        return self.valid.shape

    @property
    def density(self):
        return float(self.valid.mean()) if self.valid.size else 0.0

    @classmethod
    def empty(cls, width, height):
        z = np.zeros((height, width))
        return cls(z, z, np.full((height, width), INVALID_DEPTH), np.zeros((height, width), bool))

    @classmethod
    def uniform(cls, width, height, du=0.0, dv=0.0, depth=1.0):
        """Field valid everywhere with constant motion."""
        shape = (height, width)
        return cls(
            np.full(shape, float(du)),
            np.full(shape, float(dv)),
            np.full(shape, float(depth)),
            np.ones(shape, bool),
        )

    def scaled(self, factor):
        return MotionField(self.du * factor, self.dv * factor, self.depth, self.valid)

    def equals(self, other):
        return (
            self.shape == other.shape
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.du, other.du)
            and np.array_equal(self.dv, other.dv)
            and np.array_equal(self.depth, other.depth)
        )


@dataclass(frozen=True)
class MergeSpec:
    """Number of clouds merged, in a window centered on the anchor frame."""

    num_clouds: int = 5

    def __post_init__(self):
        if self.num_clouds < 1 or self.num_clouds % 2 == 0:
            raise ValueError(f"num_clouds must be odd and >= 1, got {self.num_clouds}")


@dataclass(frozen=True)
class PatchSpec:
    """Side length of the square patch each motion vector is copied into."""

    patch: int = 3

    def __post_init__(self):
        if self.patch < 1 or self.patch % 2 == 0:
            raise ValueError(f"patch must be odd and >= 1, got {self.patch}")

    @classmethod
    def for_task(cls, task):
        """3 for super-resolution, 7 for denoising and deblurring."""
        name = getattr(task, "value", task)
        return cls(3 if str(name).lower() in ("superres", "sr") else 7)


# ---------------------------------------------------------------------------
# sparse motion
# ---------------------------------------------------------------------------


def _anchor_candidates(points, T_lidar2cam, T_ego, K, z_min=Z_MIN, backend=None):
    """Per-point anchor pixel, depth and motion (front half of the motion kernel)."""
    return kernels.get_backend(backend).project_anchor(
        points, T_lidar2cam.m[:3], T_ego.m[:3], K.fx, K.fy, K.cx, K.cy, K.width, K.height, z_min
    )


def sparse_motion(
    pc: PointCloud,
    T_lidar2cam: RigidTransform,
    T_ego: RigidTransform,
    K: CameraIntrinsics,
    backend=None,
) -> MotionField:
    """Project every point at t and t+1 and store the pixel displacement.

    A point contributes when it is in front of the camera (z > 0.1 m) at
    both times and its frame-t projection is inside the image; the frame
    t+1 position may leave the image. Collisions are z-buffered (smaller
    frame-t depth, then smaller point index).
    """
    idx, lin, depth, du, dv = _anchor_candidates(pc.points, T_lidar2cam, T_ego, K, backend=backend)
    npix = K.width * K.height
    winner = kernels.get_backend(backend).zbuffer_select(lin, depth, idx, npix)
    hit = winner >= 0
    w = winner[hit]
    out_du = np.zeros(npix)
    out_dv = np.zeros(npix)
    out_depth = np.full(npix, INVALID_DEPTH)
    out_du[hit] = du[w]
    out_dv[hit] = dv[w]
    out_depth[hit] = depth[w]
    shape = (K.height, K.width)
    return MotionField._trusted(
        out_du.reshape(shape), out_dv.reshape(shape), out_depth.reshape(shape), hit.reshape(shape)
    )


# ---------------------------------------------------------------------------
# densification
# ---------------------------------------------------------------------------


def merge_clouds(
    clouds: Sequence[PointCloud],
    egomotions,
    center: int,
    spec: MergeSpec,
    T_lidar2cam: RigidTransform,
    strict: bool = False,
) -> PointCloud:
    """Bring the clouds of a window around ``center`` into the center LiDAR frame.

    ``egomotions[k]`` is the camera egomotion k -> k+1. Neighbor j is mapped
    by ``L^-1 chain(j -> center) L``. When the window runs past the sequence
    it is shrunk symmetrically with a warning (``strict=True`` raises
    MissingNeighbor instead). Output order: center cloud first, then
    neighbors by increasing distance, earlier frame first.
    """
    n = len(clouds)
    if not 0 <= center < n:
        raise MissingNeighbor(f"center frame {center} outside sequence of {n}")
    half = spec.num_clouds // 2
    fit = min(half, center, n - 1 - center)
    if fit < half:
        msg = (
            f"merge window of {spec.num_clouds} around frame {center} exceeds the "
            f"sequence (length {n}); using {2 * fit + 1}"
        )
        if strict:
            raise MissingNeighbor(msg)
        warnings.warn(msg, MissingNeighborWarning, stacklevel=2)
    L = T_lidar2cam
    L_inv = inverse(L)
    parts = [clouds[center]]
    for d in range(1, fit + 1):
        for j in (center - d, center + d):
            M = conjugate(L_inv, chain_egomotion(egomotions, j, center))
            parts.append(transform_cloud(M, clouds[j]))
    return PointCloud.concatenate(parts, timestamp=clouds[center].timestamp)


def densify_patched(field: MotionField, spec: PatchSpec, backend=None) -> MotionField:
    """Copy each valid motion vector into its k x k neighborhood.

    Every valid pixel (including the originals) competes for the pixels it
    covers; the smaller source depth wins, then the smaller source index.
    """
    k = spec.patch if isinstance(spec, PatchSpec) else int(spec)
    if k == 1:
        return MotionField(field.du.copy(), field.dv.copy(), field.depth.copy(), field.valid.copy())
    src = kernels.get_backend(backend).patch_spread(field.depth, field.valid, k)
    hit = src >= 0
    s = src[hit]
    du = np.zeros(src.shape)
    dv = np.zeros(src.shape)
    depth = np.full(src.shape, INVALID_DEPTH)
    du[hit] = field.du.reshape(-1)[s]
    dv[hit] = field.dv.reshape(-1)[s]
    depth[hit] = field.depth.reshape(-1)[s]
    shape = field.shape
    return MotionField(du.reshape(shape), dv.reshape(shape), depth.reshape(shape), hit.reshape(shape))


# ---------------------------------------------------------------------------
# pipeline variants
# ---------------------------------------------------------------------------


class Variant(enum.Enum):
    SPC_IMU = "SPC_IMU"
    SPC_R = "SPC_R"
    MPC_IMU = "MPC_IMU"

    @classmethod
    def parse(cls, text):
        key = str(text).upper().replace("+", "_").replace("-", "_")
        return cls(key)


@dataclass(eq=False)
class SequenceContext:
    """Everything the estimator needs for a sequence.

    ``clouds`` may be any indexable sequence (e.g. a lazy loader).
    ``timestamps[k]`` is the capture time of frame k.
    """

    clouds: Sequence[PointCloud]
    timestamps: Sequence[float]
    imu: Sequence = ()
    K: CameraIntrinsics = None
    T_lidar2cam: RigidTransform = field(default_factory=RigidTransform.identity)
    T_imu2cam: RigidTransform = field(default_factory=RigidTransform.identity)
    icp_iters: int = 50

    def __post_init__(self):
        self._imu_steps = {}
        self._icp_steps = {}

    def __len__(self):
        return len(self.clouds)

    def imu_step(self, k) -> EgomotionEstimate:
        if k not in self._imu_steps:
            self._imu_steps[k] = integrate_imu(
                self.imu, self.timestamps[k], self.timestamps[k + 1], self.T_imu2cam
            )
        return self._imu_steps[k]

    def icp_step(self, k) -> EgomotionEstimate:
        """Registration egomotion k -> k+1, expressed in the camera frame."""
        if k not in self._icp_steps:
            reg = register_icp(self.clouds[k], self.clouds[k + 1], max_iters=self.icp_iters)
            L = self.T_lidar2cam
            T = conjugate(L, reg.T)
            self._icp_steps[k] = EgomotionEstimate(T, reg.source, reg.residual, reg.history)
        return self._icp_steps[k]

    def steps(self, variant):
        get = self.icp_step if Variant(variant) is Variant.SPC_R else self.imu_step
        return _LazySteps(get, len(self) - 1)


class _LazySteps:
    def __init__(self, get, n):
        self._get = get
        self._n = n

    def __len__(self):
        return self._n

    def __getitem__(self, k):
        if not 0 <= k < self._n:
            raise IndexError(k)
        return self._get(k)


def motion_between(
    ctx: SequenceContext,
    src: int,
    dst: int,
    variant=Variant.MPC_IMU,
    merge: MergeSpec = MergeSpec(),
    patch: PatchSpec = PatchSpec(),
    K: CameraIntrinsics | None = None,
) -> MotionField:
    """Dense motion field mapping pixels of frame ``src`` to frame ``dst``."""
    variant = Variant(variant)
    K = K or ctx.K
    steps = ctx.steps(variant)
    T_ego = chain_egomotion(steps, src, dst)
    if variant is Variant.MPC_IMU:
        cloud = merge_clouds(ctx.clouds, steps, src, merge, ctx.T_lidar2cam)
    else:
        cloud = ctx.clouds[src]
    field = sparse_motion(cloud, ctx.T_lidar2cam, T_ego, K)
    return densify_patched(field, patch)


def estimate(
    ctx: SequenceContext,
    t: int,
    variant=Variant.MPC_IMU,
    merge: MergeSpec = MergeSpec(),
    patch: PatchSpec = PatchSpec(),
) -> MotionField:
    """Motion field t -> t+1 for one of the three pipeline variants.

    SPC_IMU: IMU egomotion, single cloud. SPC_R: ICP egomotion, single
    cloud. MPC_IMU: IMU egomotion, clouds merged over ``merge.num_clouds``
    frames. All variants finish with patch densification.
    """
    return motion_between(ctx, t, t + 1, variant, merge, patch)
