"""Camera egomotion from IMU integration or point-to-point ICP.

An egomotion ``T`` for the step t -> t+1 maps camera-frame coordinates at
time t to camera-frame coordinates at time t+1.

IMU payload convention: the translational payload is integrated into the
translation block as-is, and the gyro payload (rad/s about body x, y, z)
into the angles gamma, beta, alpha of the rotation product below. Loaders
are responsible for mapping sensor-native signs onto this convention (see
:mod:`lidarflow.dataio.kitti`).
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import (
    DegenerateGeometry,
    EmptyCloud,
    EmptyWindow,
    MissingStep,
    NonMonotonicTimestamps,
)
from .geometry import PointCloud, RigidTransform, compose, conjugate, inverse

log = logging.getLogger(__name__)


class ImuPayload(enum.Enum):
    VELOCITY = "velocity"
    ACCELERATION = "acceleration"


@dataclass(frozen=True)
class ImuRecord:
    """One IMU sample.

    ``linear`` is a velocity (m/s) or a gravity-compensated acceleration
    (m/s^2) depending on ``payload``; ``gyro`` is the body angular rate.
    """

    timestamp: float
    linear: tuple
    gyro: tuple
    payload: ImuPayload = ImuPayload.VELOCITY

    def __post_init__(self):
        lin = tuple(float(x) for x in self.linear)
        gyr = tuple(float(x) for x in self.gyro)
        if len(lin) != 3 or len(gyr) != 3:
            raise ValueError("linear and gyro must be 3-vectors")
        if not np.all(np.isfinite(lin + gyr + (float(self.timestamp),))):
            raise ValueError("IMU record components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "gyro", gyr)
        object.__setattr__(self, "timestamp", float(self.timestamp))

    @classmethod
    def velocity(cls, timestamp, velocity, gyro):
        return cls(timestamp, velocity, gyro, ImuPayload.VELOCITY)

    @classmethod
    def acceleration(cls, timestamp, accel, gyro):
        return cls(timestamp, accel, gyro, ImuPayload.ACCELERATION)


class EgomotionSource(enum.Enum):
    IMU = "imu"
    REGISTRATION = "registration"


@dataclass(frozen=True)
class EgomotionEstimate:
    T: RigidTransform
    source: EgomotionSource = EgomotionSource.IMU
    residual: float = 0.0
    history: tuple = ()

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")


# ---------------------------------------------------------------------------
# IMU integration
# ---------------------------------------------------------------------------


def imu_rotation(alpha, beta, gamma):
    """Rotation block from integrated angles (about z, y and x respectively).

    The product is taken verbatim: each factor is the transposed (passive)
    elementary rotation, multiplied in z, y, x order.
    """
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    Rz = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cb, 0.0, -sb], [0.0, 1.0, 0.0], [sb, 0.0, cb]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, sg], [0.0, -sg, cg]])
    return Rz @ Ry @ Rx


def imu_angles(R):
    """Inverse of :func:`imu_rotation` for |beta| < pi/2: returns (alpha, beta, gamma)."""
    # R^T = Rx(gamma) Ry(beta) Rz(alpha) in active convention
    M = np.asarray(R).T
    beta = np.arcsin(np.clip(M[0, 2], -1.0, 1.0))
    alpha = np.arctan2(-M[0, 1], M[0, 0])
    gamma = np.arctan2(-M[1, 2], M[2, 2])
    return float(alpha), float(beta), float(gamma)


def _check_monotonic(ts):
    if np.any(np.diff(ts) <= 0):
        bad = int(np.flatnonzero(np.diff(ts) <= 0)[0]) + 1
        raise NonMonotonicTimestamps(
            f"IMU timestamps must be strictly increasing (record {bad}: {ts[bad]!r} <= {ts[bad - 1]!r})"
        )


def _window_samples(ts, values, t_start, t_end):
    """Knots of the piecewise-linear signal restricted to [t_start, t_end]."""
    inner = (ts > t_start) & (ts < t_end)
    knots = np.concatenate([[t_start], ts[inner], [t_end]])
    vals = np.stack([np.interp(knots, ts, values[:, i]) for i in range(values.shape[1])], axis=1)
    return knots, vals


def _trapezoid(knots, vals):
    dt = np.diff(knots)[:, None]
    return ((vals[1:] + vals[:-1]) * 0.5 * dt).sum(axis=0)


def _cumtrapz(knots, vals, initial):
    dt = np.diff(knots)[:, None]
    steps = (vals[1:] + vals[:-1]) * 0.5 * dt
    return np.vstack([initial[None, :], initial[None, :] + np.cumsum(steps, axis=0)])


def integrate_imu(
    records: Sequence[ImuRecord],
    t_start: float,
    t_end: float,
    T_imu2cam: RigidTransform | None = None,
    initial_velocity=None,
) -> EgomotionEstimate:
    """Integrate IMU samples over [t_start, t_end] into a camera egomotion.

    Signals are linearly interpolated between records (held constant past
    the ends) and integrated with the trapezoidal rule: once for velocity
    payloads, twice for acceleration payloads (starting from
    ``initial_velocity``, default zero). The body-frame motion is conjugated
    into the camera frame with ``T_imu2cam``.
    """
    if not t_end > t_start:
        raise ValueError(f"t_end ({t_end}) must be greater than t_start ({t_start})")
    if not records:
        raise EmptyWindow("no IMU records")
    ts = np.array([r.timestamp for r in records], dtype=np.float64)
    _check_monotonic(ts)
    if ts[-1] < t_start or ts[0] > t_end:
        raise EmptyWindow(
            f"no IMU record overlaps [{t_start}, {t_end}] (records span [{ts[0]}, {ts[-1]}])"
        )
    payloads = {r.payload for r in records}
    if len(payloads) != 1:
        raise ValueError("mixed velocity/acceleration payloads in one window")
    payload = payloads.pop()

    lin = np.array([r.linear for r in records])
    gyro = np.array([r.gyro for r in records])
    knots, lin_k = _window_samples(ts, lin, t_start, t_end)
    _, gyro_k = _window_samples(ts, gyro, t_start, t_end)

    if payload is ImuPayload.VELOCITY:
        disp = _trapezoid(knots, lin_k)
    else:
        v0 = np.zeros(3) if initial_velocity is None else np.asarray(initial_velocity, float)
        vel = _cumtrapz(knots, lin_k, v0)
        disp = _trapezoid(knots, vel)
    gamma, beta, alpha = _trapezoid(knots, gyro_k)

    body = RigidTransform.from_rt(imu_rotation(alpha, beta, gamma), disp)
    if T_imu2cam is None:
        warnings.warn(
            "no IMU-to-camera calibration given; assuming identity mounting", stacklevel=2
        )
        T = body
    else:
        T = conjugate(T_imu2cam, body)
    return EgomotionEstimate(T, EgomotionSource.IMU, 0.0)


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


class VoxelGrid:
    """Uniform grid over a point set for exact bounded nearest-neighbor queries."""

    def __init__(self, points, cell):
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.cell = float(cell)
        self.origin = pts.min(axis=0) - self.cell * 0.5
        ijk = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        self.dims = ijk.max(axis=0) + 1
        key = (ijk[:, 0] * self.dims[1] + ijk[:, 1]) * self.dims[2] + ijk[:, 2]
        order = np.argsort(key, kind="stable")
        self.points = np.ascontiguousarray(pts[order])
        self.point_index = order.astype(np.int64)
        self.keys, self.starts, self.counts = np.unique(
            key[order], return_index=True, return_counts=True
        )
        self.starts = self.starts.astype(np.int64)
        self.counts = self.counts.astype(np.int64)

    def nearest(self, queries, max_dist, backend=None):
        """Return (index, distance) of each query's nearest point; -1 / inf beyond ``max_dist``."""
        max_ring = max(1, int(np.ceil(max_dist / self.cell)))
        impl = kernels.get_backend(backend)
        idx, d2 = impl.grid_nearest(
            np.ascontiguousarray(queries, dtype=np.float64),
            self.points,
            self.point_index,
            self.keys,
            self.starts,
            self.counts,
            self.origin,
            self.cell,
            self.dims,
            max_ring,
            float(max_dist),
        )
        return idx, np.sqrt(d2)


def median_spacing(points, sample=256, seed=0):
    """Median nearest-neighbor distance, estimated on a fixed subsample."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 1.0
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(pts), size=min(sample, len(pts)), replace=False)
    d = np.full(len(pick), np.inf)
    for start in range(0, len(pts), 4096):
        block = pts[start : start + 4096]
        diff = pts[pick][:, None, :] - block[None, :, :]
        dd = np.einsum("ijk,ijk->ij", diff, diff)
        own = (pick[:, None] >= start) & (pick[:, None] < start + len(block))
        if own.any():
            rows = np.flatnonzero(own[:, 0])
            dd[rows, pick[rows] - start] = np.inf
        d = np.minimum(d, dd.min(axis=1))
    spacing = float(np.median(np.sqrt(d)))
    return spacing if spacing > 0 else 1e-3


def kabsch(src, dst):
    """Least-squares rigid transform (no scale) with dst ~ R src + t."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_d)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform.from_rt(R, mu_d - R @ mu_s)


def _homogeneous_rank(pts, tol=1e-9):
    if len(pts) < 3:
        return len(pts)
    h = np.hstack([pts - pts.mean(axis=0), np.ones((len(pts), 1))])
    s = np.linalg.svd(h, compute_uv=False)
    return int((s > tol * max(1.0, s[0])).sum())


def register_icp(
    source: PointCloud,
    target: PointCloud,
    init: RigidTransform | None = None,
    max_iters: int = 50,
    tol: float = 1e-10,
    max_correspondence: float | None = None,
    backend=None,
) -> EgomotionEstimate:
    """Point-to-point ICP: find ``T`` with ``target ~ T(source)``.

    Correspondences are exact nearest neighbors within ``max_correspondence``
    (default: 8 grid cells) from a voxel grid whose cell is twice the
    target's median point spacing. Unmatched points count as
    ``max_correspondence`` in the residual, which is the truncated RMS point
    distance; with exact correspondences it cannot increase between
    iterations except by rounding, and a step that would raise it is
    rejected. Iteration stops once the residual drops by less than ``tol``
    or after ``max_iters`` alignment steps.
    """
    if len(source) == 0 or len(target) == 0:
        raise EmptyCloud("ICP needs non-empty source and target clouds")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    src = source.points
    tgt = target.points
    cell = 2.0 * median_spacing(tgt)
    grid = VoxelGrid(tgt, cell)
    dmax = 8.0 * cell if max_correspondence is None else float(max_correspondence)
    T = RigidTransform.identity() if init is None else init

    def residual_at(T):
        moved = T.apply(src)
        idx, d = grid.nearest(moved, dmax, backend)
        capped = np.where(idx >= 0, d, dmax)
        return moved, idx, float(np.sqrt(np.mean(capped * capped)))

    moved, idx, res = residual_at(T)
    history = [res]
    for _ in range(max_iters):
        m = idx >= 0
        if _homogeneous_rank(moved[m]) < 3:
            raise DegenerateGeometry(
                f"correspondence set is degenerate ({int(m.sum())} matches, collinear or fewer than 3)"
            )
        T_new = compose(kabsch(moved[m], tgt[idx[m]]), T)
        moved_new, idx_new, new_res = residual_at(T_new)
        if new_res > res:
            break  # rounding noise at convergence; keep the better iterate
        T, moved, idx = T_new, moved_new, idx_new
        history.append(new_res)
        done = res - new_res < tol
        res = new_res
        if done:
            break
    log.debug("ICP finished after %d steps, residual %.3g m", len(history) - 1, res)
    return EgomotionEstimate(T, EgomotionSource.REGISTRATION, res, tuple(history))


# ---------------------------------------------------------------------------
# chaining
# ---------------------------------------------------------------------------


def chain_egomotion(steps, from_index: int, to_index: int) -> RigidTransform:
    """Compose per-step egomotions into the transform from frame ``from_index`` to ``to_index``.

    ``steps[k]`` is the egomotion k -> k+1 (an EgomotionEstimate or a
    RigidTransform); a mapping keyed by k also works. A reversed interval
    yields the inverse of the forward chain.
    """
    if from_index == to_index:
        return RigidTransform.identity()
    lo, hi = sorted((from_index, to_index))
    T = RigidTransform.identity()
    for k in range(lo, hi):
        try:
            step = steps[k]
        except (IndexError, KeyError):
            step = None
        if k < 0 or step is None:
            raise MissingStep(f"no egomotion for step {k} -> {k + 1}")
        step_T = step.T if isinstance(step, EgomotionEstimate) else step
        T = compose(step_T, T)
    return T if from_index < to_index else inverse(T)
