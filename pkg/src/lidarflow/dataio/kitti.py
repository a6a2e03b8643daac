"""KITTI raw layout: velodyne scans, OXTS records, calibration and images.

Expected layout under a drive directory::

    image_02/data/0000000000.png   image_02/timestamps.txt
    velodyne_points/data/0000000000.bin
    oxts/data/0000000000.txt       oxts/timestamps.txt
    calib_cam_to_cam.txt  calib_velo_to_cam.txt  calib_imu_to_velo.txt

Calibration files are looked up in the drive directory first, then in its
parent (the date directory of the official archives).

OXTS mapping: the IMU payload is the motion of the scene relative to the
rig, so velocities ``(vf, vl, vu)`` (or accelerations ``(af, al, au)``) are
negated, while angular rates ``(wf, wl, wu)`` are used as-is.
"""

from __future__ import annotations

import json
import logging
import os
import warnings
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..egomotion import ImuPayload, ImuRecord
from ..errors import CalibrationParseError, MalformedRecord, MissingFile
from ..geometry import CameraIntrinsics, PointCloud, RigidTransform, compose
from ..motion import SequenceContext
from ..fieldio import atomic_write_bytes
from .images import read_image

log = logging.getLogger(__name__)

VELO_RECORD = np.dtype("<f4")
OXTS_FIELDS = (
    "lat lon alt roll pitch yaw vn ve vf vl vu ax ay az af al au "
    "wx wy wz wf wl wu pos_accuracy vel_accuracy navstat numsats posmode velmode orimode"
).split()
_OXTS_INDEX = {name: i for i, name in enumerate(OXTS_FIELDS)}
DEFAULT_RATE_HZ = 10.0


# ---------------------------------------------------------------------------
# velodyne
# ---------------------------------------------------------------------------


def parse_velodyne_bytes(data: bytes, source="<bytes>", timestamp=0.0) -> PointCloud:
    """Decode little-endian float32 (x, y, z, reflectance) quadruples."""
    if len(data) % 16:
        raise MalformedRecord(
            f"length {len(data)} is not a multiple of 16", source, f"byte {len(data) - len(data) % 16}"
        )
    rec = np.frombuffer(data, dtype=VELO_RECORD).reshape(-1, 4)
    finite = np.isfinite(rec).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise MalformedRecord("non-finite value", source, f"byte {16 * bad}")
    refl = rec[:, 3]
    out_of_range = (refl < 0) | (refl > 1)
    if out_of_range.any():
        bad = int(np.flatnonzero(out_of_range)[0])
        raise MalformedRecord("reflectance outside [0, 1]", source, f"byte {16 * bad + 12}")
    return PointCloud(rec[:, :3].astype(np.float64), refl.astype(np.float64), timestamp)


def velodyne_bytes(pc: PointCloud) -> bytes:
    rec = np.empty((len(pc), 4), dtype=VELO_RECORD)
    rec[:, :3] = pc.points
    rec[:, 3] = pc.intensity
    return rec.tobytes()


def read_velodyne(path, timestamp=0.0) -> PointCloud:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFile(path, "velodyne scan") from None
    return parse_velodyne_bytes(data, os.fspath(path), timestamp)


# ---------------------------------------------------------------------------
# OXTS
# ---------------------------------------------------------------------------


def parse_oxts_bytes(data: bytes, timestamp: float, source="<bytes>",
                     payload=ImuPayload.VELOCITY) -> ImuRecord:
    """Parse one OXTS text record (30 whitespace-separated numbers)."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as e:
        raise MalformedRecord("non-ASCII content", source, f"byte {e.start}") from None
    return parse_oxts_line(text, timestamp, source, payload)


def parse_oxts_line(text: str, timestamp: float, source="<text>",
                    payload=ImuPayload.VELOCITY) -> ImuRecord:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != 1:
        raise MalformedRecord(f"expected one record, found {len(lines)} lines", source, "line 1")
    tokens = lines[0].split()
    if len(tokens) != len(OXTS_FIELDS):
        raise MalformedRecord(
            f"expected {len(OXTS_FIELDS)} fields, found {len(tokens)}", source, "line 1"
        )
    values = []
    for col, tok in enumerate(tokens):
        try:
            v = float(tok)
        except ValueError:
            raise MalformedRecord(f"field {OXTS_FIELDS[col]!r} is not a number: {tok[:32]!r}",
                                  source, f"line 1, field {col + 1}") from None
        if not np.isfinite(v):
            raise MalformedRecord(f"field {OXTS_FIELDS[col]!r} is not finite",
                                  source, f"line 1, field {col + 1}")
        values.append(v)

    def pick(*names):
        return tuple(values[_OXTS_INDEX[n]] for n in names)

    gyro = pick("wf", "wl", "wu")
    if payload is ImuPayload.VELOCITY:
        lin = tuple(-x for x in pick("vf", "vl", "vu"))
    else:
        lin = tuple(-x for x in pick("af", "al", "au"))
    try:
        return ImuRecord(timestamp, lin, gyro, payload)
    except ValueError as e:
        raise MalformedRecord(str(e), source, "line 1") from None


def oxts_line(record: ImuRecord) -> str:
    """Render an ImuRecord as an OXTS line (unused fields zero)."""
    vals = [0.0] * len(OXTS_FIELDS)
    names = ("vf", "vl", "vu") if record.payload is ImuPayload.VELOCITY else ("af", "al", "au")
    for n, x in zip(names, record.linear):
        vals[_OXTS_INDEX[n]] = -x
    for n, x in zip(("wf", "wl", "wu"), record.gyro):
        vals[_OXTS_INDEX[n]] = x
    vals[_OXTS_INDEX["navstat"]] = 4
    vals[_OXTS_INDEX["numsats"]] = 10
    return " ".join(repr(float(v)) if i < 25 else str(int(v)) for i, v in enumerate(vals)) + "\n"


# ---------------------------------------------------------------------------
# timestamps
# ---------------------------------------------------------------------------


def parse_timestamp(text: str, reference: datetime | None = None) -> float:
    """Seconds since ``reference`` (default: midnight of the stamp's own day)."""
    text = text.strip()
    date_part, _, frac = text.partition(".")
    base = datetime.strptime(date_part, "%Y-%m-%d %H:%M:%S")
    if reference is None:
        reference = base.replace(hour=0, minute=0, second=0)
    whole = (base - reference).total_seconds()
    return whole + (float("0." + frac) if frac else 0.0)


def format_timestamp(seconds: float, day="2011-09-26") -> str:
    whole = int(np.floor(seconds))
    nanos = int(round((seconds - whole) * 1e9))
    if nanos >= 1_000_000_000:
        whole, nanos = whole + 1, nanos - 1_000_000_000
    h, rem = divmod(whole, 3600)
    m, s = divmod(rem, 60)
    return f"{day} {h:02d}:{m:02d}:{s:02d}.{nanos:09d}"


def read_timestamps(path) -> list:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        return []
    first = lines[0].strip().split(".")[0]
    try:
        ref = datetime.strptime(first, "%Y-%m-%d %H:%M:%S").replace(hour=0, minute=0, second=0)
        return [parse_timestamp(ln, ref) for ln in lines]
    except ValueError as e:
        raise MalformedRecord(f"bad timestamp: {e}", os.fspath(path)) from None


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def parse_calib_text(text: str, source="<calib>") -> dict:
    """``key: v1 v2 ...`` lines; non-numeric values (e.g. calib_time) kept as strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise CalibrationParseError(f"{source}:{lineno}: missing ':' separator")
        key = key.strip()
        try:
            out[key] = np.array([float(x) for x in rest.split()], dtype=np.float64)
        except ValueError:
            out[key] = rest.strip()
    return out


def _require(calib, key, size, source):
    v = calib.get(key)
    if v is None:
        raise CalibrationParseError(f"{source}: missing key {key!r}")
    if isinstance(v, str) or v.size != size:
        raise CalibrationParseError(f"{source}: {key!r} must hold {size} numbers")
    return v


def rigid_from_calib(calib, source="<calib>") -> RigidTransform:
    R = _require(calib, "R", 9, source).reshape(3, 3)
    T = _require(calib, "T", 3, source)
    try:
        return RigidTransform.from_rt(R, T, orthonormalize=True)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise CalibrationParseError(f"{source}: invalid rigid transform: {e}") from None


@dataclass(frozen=True)
class Calibration:
    K: CameraIntrinsics
    T_lidar2cam: RigidTransform
    T_imu2cam: RigidTransform

    def to_dict(self):
        k = self.K
        return {
            "K": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
            "T_lidar2cam": self.T_lidar2cam.to_list(),
            "T_imu2cam": self.T_imu2cam.to_list(),
        }


def _find_calib(root: Path, name):
    for d in (root, root.parent):
        p = d / name
        if p.is_file():
            return p
    return None


def load_calibration(root, camera=2, image_size=None) -> Calibration:
    """Compose K, LiDAR->rectified camera and IMU->rectified camera transforms.

    ``T_lidar2cam = [I | K^-1 P_rect[:, 3]] * R_rect_00 * T_velo2cam``, so
    points land in the rectified frame of camera ``camera`` whose pinhole
    intrinsics are the left 3x3 block of ``P_rect_0{camera}``.
    """
    root = Path(root)
    cam_path = _find_calib(root, "calib_cam_to_cam.txt")
    velo_path = _find_calib(root, "calib_velo_to_cam.txt")
    if cam_path is None:
        raise MissingFile(root / "calib_cam_to_cam.txt", "calibration")
    if velo_path is None:
        raise MissingFile(root / "calib_velo_to_cam.txt", "calibration")
    cam = parse_calib_text(cam_path.read_text(), os.fspath(cam_path))
    P = _require(cam, f"P_rect_0{camera}", 12, cam_path).reshape(3, 4)
    Kmat = P[:, :3]
    if not (Kmat[0, 0] > 0 and Kmat[1, 1] > 0):
        raise CalibrationParseError(f"{cam_path}: P_rect_0{camera} has non-positive focal length")
    if f"S_rect_0{camera}" in cam:
        w, h = (int(round(x)) for x in _require(cam, f"S_rect_0{camera}", 2, cam_path))
    elif image_size is not None:
        w, h = image_size
    else:
        raise CalibrationParseError(f"{cam_path}: no S_rect_0{camera} and no image to size from")
    try:
        K = CameraIntrinsics(*(float(Kmat[i, j]) for i, j in ((0, 0), (1, 1), (0, 2), (1, 2))), w, h)
    except ValueError as e:
        raise CalibrationParseError(f"{cam_path}: {e}") from None
    offset = np.linalg.solve(Kmat, P[:, 3])
    T_rect = RigidTransform.identity()
    if "R_rect_00" in cam:
        R0 = _require(cam, "R_rect_00", 9, cam_path).reshape(3, 3)
        T_rect = RigidTransform.from_rt(R0, np.zeros(3), orthonormalize=True)
    to_cam = compose(RigidTransform.from_rt(np.eye(3), offset), T_rect)

    velo = parse_calib_text(velo_path.read_text(), os.fspath(velo_path))
    T_velo2cam = compose(to_cam, rigid_from_calib(velo, os.fspath(velo_path)))

    imu_path = _find_calib(root, "calib_imu_to_velo.txt")
    if imu_path is None:
        warnings.warn(
            f"no calib_imu_to_velo.txt near {root}; assuming identity IMU-to-camera mounting",
            stacklevel=2,
        )
        T_imu2cam = RigidTransform.identity()
    else:
        imu = parse_calib_text(imu_path.read_text(), os.fspath(imu_path))
        T_imu2cam = compose(T_velo2cam, rigid_from_calib(imu, os.fspath(imu_path)))
    return Calibration(K, T_velo2cam, T_imu2cam)


# ---------------------------------------------------------------------------
# sequence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameEntry:
    image: str
    cloud: str
    imu_span: tuple
    timestamp: float


@dataclass(frozen=True)
class SequenceManifest:
    root: str
    frames: tuple
    calibration: Calibration
    camera: int = 2

    def to_dict(self):
        return {
            "root": self.root,
            "camera": self.camera,
            "calibration": self.calibration.to_dict(),
            "frames": [
                {"image": f.image, "cloud": f.cloud, "imu_span": list(f.imu_span), "timestamp": f.timestamp}
                for f in self.frames
            ],
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


class _LazyClouds:
    def __init__(self, seq):
        self._seq = seq

    def __len__(self):
        return len(self._seq.manifest.frames)

    def __getitem__(self, i):
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        return self._seq.cloud(i % len(self))


class KittiSequence:
    """Manifest plus lazy per-frame accessors (clouds and images are cached)."""

    def __init__(self, manifest: SequenceManifest, imu_records):
        self.manifest = manifest
        self.imu_records = tuple(imu_records)
        self.clouds = _LazyClouds(self)
        self._cloud = lru_cache(maxsize=32)(self._load_cloud)

    def __len__(self):
        return len(self.manifest.frames)

    @property
    def timestamps(self):
        return [f.timestamp for f in self.manifest.frames]

    @property
    def calibration(self):
        return self.manifest.calibration

    def _load_cloud(self, i):
        entry = self.manifest.frames[i]
        return read_velodyne(entry.cloud, entry.timestamp)

    def cloud(self, i) -> PointCloud:
        return self._cloud(i)

    def image(self, i):
        return read_image(self.manifest.frames[i].image)

    def images(self):
        return [self.image(i) for i in range(len(self))]

    def context(self, K=None, **kw) -> SequenceContext:
        """Estimation context; pass ``K`` to estimate on resampled frames."""
        c = self.calibration
        return SequenceContext(
            clouds=self.clouds,
            timestamps=self.timestamps,
            imu=self.imu_records,
            K=K or c.K,
            T_lidar2cam=c.T_lidar2cam,
            T_imu2cam=c.T_imu2cam,
            **kw,
        )


def _data_files(directory: Path, suffix):
    if not directory.is_dir():
        raise MissingFile(directory, "directory")
    return sorted(p for p in directory.iterdir() if p.suffix == suffix)


def _stamps_or_uniform(path: Path, n, what):
    if path.is_file():
        ts = read_timestamps(path)
        if len(ts) < n:
            raise MalformedRecord(f"{len(ts)} timestamps for {n} {what} frames", os.fspath(path))
        ts = ts[:n]
        if np.any(np.diff(ts) <= 0):
            raise MalformedRecord("timestamps not strictly increasing", os.fspath(path))
        return ts
    warnings.warn(f"{path} missing; assuming uniform {DEFAULT_RATE_HZ:g} Hz", stacklevel=3)
    return [k / DEFAULT_RATE_HZ for k in range(n)]


def load_kitti_sequence(root, camera=2, payload=ImuPayload.VELOCITY) -> KittiSequence:
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(root, "dataset directory")
    img_dir = root / f"image_0{camera}"
    images = _data_files(img_dir / "data", ".png")
    scans = {p.stem: p for p in _data_files(root / "velodyne_points" / "data", ".bin")}
    oxts_files = _data_files(root / "oxts" / "data", ".txt")
    if not images:
        raise MissingFile(img_dir / "data", "image frames")
    for p in images:
        if p.stem not in scans:
            raise MissingFile(root / "velodyne_points" / "data" / f"{p.stem}.bin", "velodyne scan")

    frame_ts = _stamps_or_uniform(img_dir / "timestamps.txt", len(images), "image")
    imu_ts = _stamps_or_uniform(root / "oxts" / "timestamps.txt", len(oxts_files), "oxts")
    records = [
        parse_oxts_bytes(p.read_bytes(), t, os.fspath(p), payload)
        for p, t in zip(oxts_files, imu_ts)
    ]

    image_size = None
    cam_path = _find_calib(root, "calib_cam_to_cam.txt")
    if cam_path is None or f"S_rect_0{camera}" not in parse_calib_text(cam_path.read_text()):
        first = read_image(images[0])
        image_size = (first.shape[1], first.shape[0])
    calib = load_calibration(root, camera, image_size)

    its = np.asarray(imu_ts)
    frames = []
    for k, (img, t) in enumerate(zip(images, frame_ts)):
        t_next = frame_ts[k + 1] if k + 1 < len(frame_ts) else t
        lo = int(np.searchsorted(its, t, side="left"))
        hi = int(np.searchsorted(its, t_next, side="right"))
        frames.append(FrameEntry(os.fspath(img), os.fspath(scans[img.stem]), (lo, hi), float(t)))
    manifest = SequenceManifest(os.fspath(root), tuple(frames), calib, camera)
    log.info("loaded %d frames from %s", len(frames), root)
    return KittiSequence(manifest, records)


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------


def _write_text(path, text):
    atomic_write_bytes(path, text.encode("ascii"))


def _calib_line(key, values):
    return f"{key}: " + " ".join(f"{float(v):.16e}" for v in np.ravel(values)) + "\n"


def write_calibration(root, K: CameraIntrinsics, T_velo2cam: RigidTransform,
                      T_imu2velo: RigidTransform, camera=2):
    """Emit calibration files with identity rectification and zero stereo offset."""
    root = Path(root)
    P = np.hstack([K.matrix, np.zeros((3, 1))])
    cam = "calib_time: synthetic\n"
    cam += _calib_line("R_rect_00", np.eye(3))
    cam += _calib_line(f"S_rect_0{camera}", [K.width, K.height])
    cam += _calib_line(f"P_rect_0{camera}", P)
    _write_text(root / "calib_cam_to_cam.txt", cam)
    for name, T in (("calib_velo_to_cam.txt", T_velo2cam), ("calib_imu_to_velo.txt", T_imu2velo)):
        text = "calib_time: synthetic\n" + _calib_line("R", T.R) + _calib_line("T", T.t)
        _write_text(root / name, text)


def write_kitti_sequence(root, images, clouds, imu_records, frame_timestamps, K,
                         T_velo2cam, T_imu2velo, camera=2):
    """Write a sequence in the raw layout (one OXTS record per entry of ``imu_records``)."""
    from .images import write_image

    root = Path(root)
    img_dir = root / f"image_0{camera}" / "data"
    velo_dir = root / "velodyne_points" / "data"
    oxts_dir = root / "oxts" / "data"
    for d in (img_dir, velo_dir, oxts_dir):
        d.mkdir(parents=True, exist_ok=True)
    for k, (img, pc) in enumerate(zip(images, clouds)):
        write_image(img, img_dir / f"{k:010d}.png")
        atomic_write_bytes(velo_dir / f"{k:010d}.bin", velodyne_bytes(pc))
    for k, rec in enumerate(imu_records):
        _write_text(oxts_dir / f"{k:010d}.txt", oxts_line(rec))
    stamps = "".join(format_timestamp(t) + "\n" for t in frame_timestamps)
    _write_text(root / f"image_0{camera}" / "timestamps.txt", stamps)
    _write_text(root / "velodyne_points" / "timestamps.txt", stamps)
    _write_text(
        root / "oxts" / "timestamps.txt",
        "".join(format_timestamp(r.timestamp) + "\n" for r in imu_records),
    )
    write_calibration(root, K, T_velo2cam, T_imu2velo, camera)
