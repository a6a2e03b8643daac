"""Synthetic rigid scenes with exact ground truth.

The world is the IMU body frame at frame 0 (x forward, y left, z up). A
scene is a set of textured parallelograms (boxes are six of them). Frames
are ray cast through pixel centers; LiDAR returns are ray cast from the
LiDAR origin along randomly drawn directions covering the full azimuth and
the camera's vertical field of view plus a margin. The rig moves with a
constant per-frame body motion ``B`` (rotation from yaw/pitch/roll through
:func:`imu_rotation`, translation ``-translation``), and IMU records carry
exactly the rates that integrate back to ``B``. Degradations are applied after ground truth is captured.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..egomotion import EgomotionEstimate, EgomotionSource, ImuRecord, chain_egomotion, imu_rotation
from ..errors import InvalidSpec
from ..geometry import (
    Z_MIN,
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    compose,
    conjugate,
    inverse,
    pinhole,
)
from ..motion import INVALID_DEPTH, MotionField, SequenceContext

# KITTI-like mounting: velodyne x fwd / y left / z up, camera x right / y down / z fwd
VELO2CAM = RigidTransform.from_rt([[0, -1, 0], [0, 0, -1], [1, 0, 0]], [0.0, -0.08, -0.27])
IMU2VELO = RigidTransform.from_rt(np.eye(3), [-0.81, 0.32, -0.80])
GROUND_Z = -0.93


@dataclass
class Texture:
    base: float = 0.5
    freqs: list = field(default_factory=list)  # (fs, fr) cycles per meter
    amps: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    tint: tuple = (1.0, 1.0, 1.0)

    def __call__(self, s, r):
        val = np.full(np.shape(s), self.base, dtype=np.float64)
        for (fs, fr), a, p in zip(self.freqs, self.amps, self.phases):
            val += a * np.sin(2.0 * np.pi * (fs * s + fr * r) + p)
        return np.clip(val, 0.0, 1.0)

    @classmethod
    def random(cls, rng, n=3, fmax=0.5):
        ang = rng.uniform(0, np.pi, n)
        mag = rng.uniform(0.3 * fmax, fmax, n)
        return cls(
            base=float(rng.uniform(0.35, 0.65)),
            freqs=[(float(m * np.cos(a)), float(m * np.sin(a))) for m, a in zip(mag, ang)],
            amps=[float(x) for x in rng.uniform(0.08, 0.16, n)],
            phases=[float(x) for x in rng.uniform(0, 2 * np.pi, n)],
            tint=tuple(float(x) for x in rng.uniform(0.6, 1.0, 3)),
        )


@dataclass
class Quad:
    """Parallelogram ``origin + a e1 + b e2`` for a, b in [0, 1], world frame."""

    origin: tuple
    e1: tuple
    e2: tuple
    texture: Texture = field(default_factory=Texture)

    def to_dict(self):
        return {"type": "quad", **asdict(self)}


def box_quads(center, size, yaw, textures):
    c = np.asarray(center, float)
    sx, sy, sz = size
    R = np.array([[np.cos(yaw), -np.sin(yaw), 0], [np.sin(yaw), np.cos(yaw), 0], [0, 0, 1]])
    ex, ey, ez = R[:, 0] * sx, R[:, 1] * sy, R[:, 2] * sz
    o = c - (ex + ey + ez) / 2
    faces = [
        (o, ex, ez), (o + ey, ex, ez),      # -y / +y
        (o, ey, ez), (o + ex, ey, ez),      # -x / +x
        (o, ex, ey), (o + ez, ex, ey),      # bottom / top
    ]
    return [Quad(tuple(a), tuple(b), tuple(d), textures[i % len(textures)])
            for i, (a, b, d) in enumerate(faces)]


def default_scene(rng, n_front=8, n_around=10):
    """Ground and four walls enclosing textured boxes, some in view, some around the rig."""
    g = GROUND_Z
    quads = [
        Quad((-40.0, -40.0, g), (120.0, 0.0, 0.0), (0.0, 80.0, 0.0), Texture.random(rng, fmax=0.6)),
        Quad((60.0, -40.0, g), (0.0, 80.0, 0.0), (0.0, 0.0, 40.0), Texture.random(rng, fmax=0.2)),
        Quad((-40.0, -40.0, g), (0.0, 80.0, 0.0), (0.0, 0.0, 40.0), Texture.random(rng, fmax=0.2)),
        Quad((-40.0, 14.0, g), (100.0, 0.0, 0.0), (0.0, 0.0, 40.0), Texture.random(rng)),
        Quad((-40.0, -14.0, g), (100.0, 0.0, 0.0), (0.0, 0.0, 40.0), Texture.random(rng)),
    ]
    centers = [(rng.uniform(10.0, 30.0), rng.uniform(-9.0, 9.0)) for _ in range(n_front)]
    centers += [
        (rng.uniform(-30.0, 40.0), rng.choice([-1.0, 1.0]) * rng.uniform(4.0, 12.0))
        for _ in range(n_around)
    ]
    for x, y in centers:
        size = rng.uniform([0.6, 0.6, 0.6], [2.5, 2.5, 2.5])
        tex = [Texture.random(rng) for _ in range(3)]
        quads += box_quads((x, y, g + size[2] / 2), size, rng.uniform(0, np.pi), tex)
    return quads


def _quads_from_dicts(items):
    out = []
    for d in items:
        d = dict(d)
        kind = d.pop("type", "quad")
        tex = Texture(**d.pop("texture", {})) if isinstance(d.get("texture", {}), dict) else d.pop("texture")
        if kind == "quad":
            out.append(Quad(tuple(d["origin"]), tuple(d["e1"]), tuple(d["e2"]), tex))
        elif kind == "box":
            out += box_quads(d["center"], d["size"], d.get("yaw", 0.0), [tex])
        else:
            raise InvalidSpec(f"unknown primitive type {kind!r}")
    return out


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    num_points: int = 16000
    primitives: list | None = None
    frames: int = 7
    width: int = 160
    height: int = 120
    focal: float | None = None  # default 0.6 * width
    translation: tuple = (0.5, 0.0, 0.0)  # rig motion per frame, body frame (m)
    yaw: float = 0.01  # rad per frame about body z
    pitch: float = 0.0
    roll: float = 0.0
    dt: float = 0.1
    channels: int = 1
    noise_sigma: float = 0.0
    blur_sigma: float | list = 0.0
    downsample: int = 1
    lidar_margin: float = 0.1
    imu_noise_velocity: float = 0.0
    imu_noise_gyro: float = 0.0

    def validate(self):
        if self.num_points < 1:
            raise InvalidSpec("num_points must be >= 1")
        if self.frames < 2:
            raise InvalidSpec(f"frames must be >= 2, got {self.frames}")
        if self.width < 16 or self.height < 16:
            raise InvalidSpec("image must be at least 16x16")
        if self.channels not in (1, 3):
            raise InvalidSpec("channels must be 1 or 3")
        if self.downsample < 1 or self.width % self.downsample or self.height % self.downsample:
            raise InvalidSpec("downsample must be >= 1 and divide the image size")
        if self.dt <= 0:
            raise InvalidSpec("dt must be positive")
        if self.noise_sigma < 0 or self.imu_noise_velocity < 0 or self.imu_noise_gyro < 0:
            raise InvalidSpec("noise levels must be non-negative")
        blur = np.atleast_1d(np.asarray(self.blur_sigma, dtype=float))
        if blur.size not in (1, self.frames) or np.any(blur < 0):
            raise InvalidSpec("blur_sigma must be a non-negative scalar or one value per frame")
        if len(self.translation) != 3:
            raise InvalidSpec("translation must be a 3-vector")
        return self

    def to_dict(self):
        d = asdict(self)
        if self.primitives is not None:
            d["primitives"] = [p.to_dict() if isinstance(p, Quad) else p for p in self.primitives]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown spec keys: {sorted(unknown)}")
        d = dict(d)
        if "translation" in d:
            d["translation"] = tuple(d["translation"])
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidSpec(str(e)) from None

    @classmethod
    def load(cls, path):
        text = Path(path).read_text()
        try:
            if str(path).endswith(".toml"):
                try:
                    import tomllib
                except ModuleNotFoundError:  # Python < 3.11
                    import tomli as tomllib
                d = tomllib.loads(text)
            else:
                d = json.loads(text)
        except ValueError as e:
            raise InvalidSpec(f"{path}: {e}") from None
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------


def cast_rays(origin, dirs, quads):
    """Nearest hit of rays ``origin + t dirs`` (t > 0) against parallelograms.

    Returns (t, quad index, s, r) with t = inf / index -1 on misses; s, r are
    surface coordinates in meters along e1, e2.
    """
    dirs = np.asarray(dirs, float)
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_q = np.full(n, -1, dtype=np.int64)
    best_s = np.zeros(n)
    best_r = np.zeros(n)
    o = np.asarray(origin, float)
    for qi, q in enumerate(quads):
        qo, e1, e2 = (np.asarray(x, float) for x in (q.origin, q.e1, q.e2))
        nrm = np.cross(e1, e2)
        denom = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((qo - o) @ nrm) / denom
        ok = np.isfinite(t) & (t > 1e-9) & (t < best_t)
        if not ok.any():
            continue
        idx = np.flatnonzero(ok)
        rel = o + t[idx, None] * dirs[idx] - qo
        # solve rel = a e1 + b e2 in least squares (exact for in-plane points)
        G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        ab = np.linalg.solve(G, np.stack([rel @ e1, rel @ e2]))
        inside = (ab[0] >= 0) & (ab[0] <= 1) & (ab[1] >= 0) & (ab[1] <= 1)
        idx = idx[inside]
        best_t[idx] = t[idx]
        best_q[idx] = qi
        best_s[idx] = ab[0][inside] * np.linalg.norm(e1)
        best_r[idx] = ab[1][inside] * np.linalg.norm(e2)
    return best_t, best_q, best_s, best_r


def shade(quads, qidx, s, r, channels):
    out = np.zeros((len(qidx), channels))
    for qi in np.unique(qidx[qidx >= 0]):
        m = qidx == qi
        tex = quads[qi].texture
        val = tex(s[m], r[m])
        if channels == 1:
            out[m, 0] = val
        else:
            out[m] = val[:, None] * np.asarray(tex.tint)[None, :]
    return out


def decimate(img, factor):
    """Keep every ``factor``-th row and column (point sampling, matches :meth:`CameraIntrinsics.scaled`)."""
    if factor == 1:
        return img
    h, w = img.shape[:2]
    return img[: h - h % factor : factor, : w - w % factor : factor]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SyntheticSequence:
    spec: SyntheticSceneSpec
    quads: list
    K: CameraIntrinsics
    T_lidar2cam: RigidTransform
    T_imu2cam: RigidTransform
    T_imu2velo: RigidTransform
    body_motion: RigidTransform
    poses: list  # world -> camera k
    egomotions: list  # EgomotionEstimate k -> k+1, camera frame
    timestamps: list
    clean_frames: list  # full resolution
    frames: list  # degraded, possibly downsampled
    clouds: list
    imu_records: list
    gt_fields: list  # dense analytic k -> k+1 at full resolution

    @property
    def K_frames(self):
        """Intrinsics matching ``frames`` (downsampled when requested)."""
        f = self.spec.downsample
        return self.K if f == 1 else self.K.scaled(f)

    def __len__(self):
        return len(self.clean_frames)

    def context(self, imu=None, K=None, **kw) -> SequenceContext:
        return SequenceContext(
            clouds=self.clouds,
            timestamps=self.timestamps,
            imu=self.imu_records if imu is None else imu,
            K=K or self.K_frames,
            T_lidar2cam=self.T_lidar2cam,
            T_imu2cam=self.T_imu2cam,
            **kw,
        )

    def camera_points(self, k, K=None):
        """Camera-frame surface point behind every pixel center of frame k, plus hit mask."""
        K = K or self.K
        return _camera_points(self.quads, self.poses[k], K)

    def gt_field(self, src, dst, K=None) -> MotionField:
        """Analytic dense motion of pixel centers of frame ``src`` into frame ``dst``."""
        K = K or self.K
        p, hit = self.camera_points(src, K)
        E = chain_egomotion(self.egomotions, src, dst)
        q = E.apply(p)
        u0, v0, _ = pinhole(K, p)
        u1, v1, z1 = pinhole(K, q)
        valid = hit & (z1 > Z_MIN)
        shape = (K.height, K.width)
        return MotionField(
            np.where(valid, u1 - u0, 0.0).reshape(shape),
            np.where(valid, v1 - v0, 0.0).reshape(shape),
            np.where(valid, p[:, 2], INVALID_DEPTH).reshape(shape),
            valid.reshape(shape),
        )

    def digest(self):
        """SHA-256 over every generated array."""
        h = hashlib.sha256()
        for arrs in (self.clean_frames, self.frames):
            for a in arrs:
                h.update(np.ascontiguousarray(a).tobytes())
        for pc in self.clouds:
            h.update(pc.points.tobytes())
            h.update(pc.intensity.tobytes())
        for r in self.imu_records:
            h.update(np.array((r.timestamp,) + r.linear + r.gyro).tobytes())
        for f in self.gt_fields:
            for a in (f.du, f.dv, f.depth, f.valid):
                h.update(np.ascontiguousarray(a).tobytes())
        for e in self.egomotions:
            h.update(e.T.m.tobytes())
        return h.hexdigest()

    def to_kitti(self, root):
        """Write the degraded frames, clouds, IMU and calibration in the raw layout."""
        from ..fieldio import atomic_write_bytes, write_lfmf
        from .images import write_image
        from .kitti import write_kitti_sequence

        root = Path(root)
        write_kitti_sequence(
            root, self.frames, self.clouds, self.imu_records, self.timestamps,
            self.K_frames, self.T_lidar2cam, self.T_imu2velo,
        )
        gt = root / "ground_truth"
        (gt / "clean").mkdir(parents=True, exist_ok=True)
        (gt / "fields").mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(self.clean_frames):
            write_image(img, gt / "clean" / f"{k:010d}.png")
        for k, f in enumerate(self.gt_fields):
            write_lfmf(f, gt / "fields" / f"{k:010d}.lfmf")
        meta = {
            "spec": self.spec.to_dict(),
            "egomotions": [e.T.to_list() for e in self.egomotions],
            "digest": self.digest(),
        }
        atomic_write_bytes(gt / "meta.json", json.dumps(meta, indent=2, sort_keys=True).encode())
        return root


def _pixel_rays(K, us, vs):
    return np.stack([(us - K.cx) / K.fx, (vs - K.cy) / K.fy, np.ones_like(us)], axis=-1)


def _camera_points(quads, W, K):
    vs, us = np.mgrid[0 : K.height, 0 : K.width]
    rays = _pixel_rays(K, us.reshape(-1).astype(float), vs.reshape(-1).astype(float))
    W_inv = inverse(W)
    t, q, _, _ = cast_rays(W_inv.t, rays @ W_inv.R.T, quads)
    hit = np.isfinite(t)
    p = np.where(hit[:, None], rays * np.where(hit, t, 1.0)[:, None], 0.0)
    return p, hit


def _render(quads, W, K, channels):
    vs, us = np.mgrid[0 : K.height, 0 : K.width]
    rays = _pixel_rays(K, us.reshape(-1).astype(float), vs.reshape(-1).astype(float))
    W_inv = inverse(W)
    _, q, s, r = cast_rays(W_inv.t, rays @ W_inv.R.T, quads)
    col = shade(quads, q, s, r, channels)
    col[q < 0] = 0.0
    shape = (K.height, K.width) if channels == 1 else (K.height, K.width, channels)
    return col.reshape(shape).astype(np.float32)


def _lidar_scan(quads, W_cam, K, n, margin, rng, timestamp):
    """Ray cast ``n`` random directions from the LiDAR origin; keep hits.

    Azimuth covers the full circle; elevation covers the camera's vertical
    field of view widened by ``margin`` (a fraction of the half angle).
    """
    half = np.arctan2(max(K.cy, K.height - 1 - K.cy) + 0.5, K.fy) * (1.0 + margin)
    az = rng.uniform(-np.pi, np.pi, n)
    el = np.arcsin(rng.uniform(-np.sin(half), np.sin(half), n))
    dirs_velo = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    W_velo = compose(inverse(VELO2CAM), W_cam)  # world -> velo
    velo2world = inverse(W_velo)
    dirs = dirs_velo @ velo2world.R.T
    t, q, s, r = cast_rays(velo2world.t, dirs, quads)
    hit = np.isfinite(t)
    pts_world = velo2world.t + t[hit, None] * dirs[hit]
    inten = shade(quads, q[hit], s[hit], r[hit], 1)[:, 0]
    return PointCloud(W_velo.apply(pts_world), inten, timestamp)


def generate_synthetic(spec: SyntheticSceneSpec) -> SyntheticSequence:
    spec.validate()
    ss = np.random.SeedSequence(spec.seed)
    scene_rng, lidar_rng, noise_rng, imu_rng = (np.random.default_rng(s) for s in ss.spawn(4))

    quads = default_scene(scene_rng) if spec.primitives is None else _quads_from_dicts(
        [p.to_dict() if isinstance(p, Quad) else p for p in spec.primitives]
    )
    focal = spec.focal or 0.6 * spec.width
    K = CameraIntrinsics(focal, focal, (spec.width - 1) / 2.0, (spec.height - 1) / 2.0,
                         spec.width, spec.height)
    T_imu2cam = compose(VELO2CAM, IMU2VELO)

    angles = (spec.yaw, spec.pitch, spec.roll)
    body = RigidTransform.from_rt(imu_rotation(*angles), -np.asarray(spec.translation, float))
    E = conjugate(T_imu2cam, body)
    n = spec.frames
    poses = [T_imu2cam]
    for _ in range(n - 1):
        poses.append(compose(E, poses[-1]))
    egomotions = [EgomotionEstimate(E, EgomotionSource.IMU, 0.0) for _ in range(n - 1)]
    timestamps = [k * spec.dt for k in range(n)]

    velocity = body.t / spec.dt
    gyro = np.array([spec.roll, spec.pitch, spec.yaw]) / spec.dt
    imu = []
    for t in timestamps:
        v = velocity + imu_rng.normal(0.0, spec.imu_noise_velocity, 3) if spec.imu_noise_velocity else velocity
        g = gyro + imu_rng.normal(0.0, spec.imu_noise_gyro, 3) if spec.imu_noise_gyro else gyro
        imu.append(ImuRecord.velocity(t, v, g))

    clean = [_render(quads, W, K, spec.channels) for W in poses]
    clouds = [
        _lidar_scan(quads, W, K, spec.num_points, spec.lidar_margin, lidar_rng, t)
        for W, t in zip(poses, timestamps)
    ]

    blur = np.broadcast_to(np.atleast_1d(np.asarray(spec.blur_sigma, float)), (n,))
    frames = []
    for k, img in enumerate(clean):
        out = img.astype(np.float64)
        if blur[k] > 0:
            sig = (blur[k], blur[k]) + ((0,) if out.ndim == 3 else ())
            out = ndimage.gaussian_filter(out, sig, mode="nearest")
        out = decimate(out, spec.downsample)
        if spec.noise_sigma > 0:
            out = out + noise_rng.normal(0.0, spec.noise_sigma, out.shape)
        frames.append(np.clip(out, 0.0, 1.0).astype(np.float32))

    seq = SyntheticSequence(
        spec=spec, quads=quads, K=K, T_lidar2cam=VELO2CAM, T_imu2cam=T_imu2cam,
        T_imu2velo=IMU2VELO, body_motion=body, poses=poses, egomotions=egomotions,
        timestamps=timestamps, clean_frames=clean, frames=frames, clouds=clouds,
        imu_records=imu, gt_fields=[],
    )
    seq.gt_fields = [seq.gt_field(k, k + 1) for k in range(n - 1)]
    return seq
