import hashlib
import shutil
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lidarflow.dataio.images import decode_image, encode_png, read_image, to_uint8, write_image
from lidarflow.dataio.kitti import (
    OXTS_FIELDS,
    format_timestamp,
    load_calibration,
    load_kitti_sequence,
    oxts_line,
    parse_calib_text,
    parse_oxts_bytes,
    parse_timestamp,
    parse_velodyne_bytes,
    read_timestamps,
    velodyne_bytes,
    write_kitti_sequence,
)
from lidarflow.dataio.synthetic import SyntheticSceneSpec, generate_synthetic
from lidarflow.egomotion import ImuPayload, ImuRecord
from lidarflow.errors import (
    CalibrationParseError,
    DecodeError,
    InvalidSpec,
    MalformedRecord,
    MissingFile,
)
from lidarflow.geometry import RigidTransform

# --- velodyne -------------------------------------------------------------------


def test_velodyne_record_decodes_exactly():
    pc = parse_velodyne_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    np.testing.assert_array_equal(pc.points, [[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(pc.intensity, [0.5])


def test_velodyne_framing_and_values():
    data = struct.pack("<8f", 1, 2, 3, 0.5, 4, 5, 6, 0.25)
    with pytest.raises(MalformedRecord, match="multiple of 16") as e:
        parse_velodyne_bytes(data[:-3], "scan.bin")
    assert e.value.location == "byte 16" and e.value.source == "scan.bin"
    with pytest.raises(MalformedRecord, match="non-finite"):
        parse_velodyne_bytes(struct.pack("<4f", np.nan, 0, 0, 0))
    with pytest.raises(MalformedRecord, match="reflectance"):
        parse_velodyne_bytes(struct.pack("<4f", 0, 0, 0, 1.5))
    assert len(parse_velodyne_bytes(b"")) == 0


@given(st.binary(max_size=200))
@settings(max_examples=300, deadline=None)
def test_velodyne_parser_is_total(data):
    try:
        pc = parse_velodyne_bytes(data)
    except MalformedRecord as e:
        assert e.location is not None
    else:
        assert velodyne_bytes(pc) == data


# --- OXTS ---------------------------------------------------------------------------


def test_oxts_fixture_signs(fixtures_dir):
    rec = parse_oxts_bytes((fixtures_dir / "kitti_min/oxts/data/0000000000.txt").read_bytes(), 1.0)
    assert rec.linear == (-5.0, -0.1, -0.0)
    assert rec.gyro == (0.0, 0.0, 0.1)
    acc = parse_oxts_bytes((fixtures_dir / "kitti_min/oxts/data/0000000000.txt").read_bytes(), 1.0,
                           payload=ImuPayload.ACCELERATION)
    assert acc.linear == (-0.1, -0.2, -9.8)


def test_oxts_line_round_trip():
    rec = ImuRecord.velocity(2.5, (1.25, -0.5, 0.0), (0.01, -0.02, 0.3))
    back = parse_oxts_bytes(oxts_line(rec).encode(), 2.5)
    assert back == rec
    assert len(oxts_line(rec).split()) == len(OXTS_FIELDS)


@pytest.mark.parametrize("text,match", [
    ("1 2 3\n", "expected 30 fields"),
    ("", "expected one record"),
    ("0 " * 29 + "x\n", "not a number"),
    ("0 " * 29 + "nan\n", "not finite"),
    (("0 " * 30 + "\n") * 2, "expected one record"),
])
def test_oxts_malformed(text, match):
    with pytest.raises(MalformedRecord, match=match) as e:
        parse_oxts_bytes(text.encode(), 0.0, "x.txt")
    assert e.value.location is not None


def test_oxts_non_ascii():
    with pytest.raises(MalformedRecord, match="non-ASCII"):
        parse_oxts_bytes("0 é".encode(), 0.0)


@given(st.binary(max_size=300))
@settings(max_examples=300, deadline=None)
def test_oxts_parser_is_total(data):
    try:
        parse_oxts_bytes(data, 0.0)
    except MalformedRecord as e:
        assert e.location is not None


# --- timestamps and calibration ---------------------------------------------------------


def test_timestamps():
    assert parse_timestamp("2011-09-26 13:02:25.964389445") == pytest.approx(13 * 3600 + 2 * 60 + 25.964389445)
    assert format_timestamp(47845.5) == "2011-09-26 13:17:25.500000000"
    t = parse_timestamp(format_timestamp(1234.000000001))
    assert t == pytest.approx(1234.000000001, abs=1e-9)


def test_read_timestamps_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("garbage\n")
    with pytest.raises(MalformedRecord):
        read_timestamps(p)


def test_calibration_composition(fixtures_dir):
    calib = load_calibration(fixtures_dir / "kitti_min")
    K = calib.K
    assert (K.fx, K.fy, K.cx, K.cy, K.width, K.height) == (100.0, 100.0, 1.5, 1.0, 4, 3)
    np.testing.assert_array_equal(calib.T_lidar2cam.R, [[0, -1, 0], [0, 0, -1], [1, 0, 0]])
    np.testing.assert_allclose(calib.T_lidar2cam.t, [0.1, -0.2, 0.3], atol=1e-15)
    # hand product of velo->cam and imu->velo
    np.testing.assert_allclose(calib.T_imu2cam.R, [[-1, 0, 0], [0, 0, -1], [0, -1, 0]], atol=1e-15)
    np.testing.assert_allclose(calib.T_imu2cam.t, [-1.9, -3.2, 1.3], atol=1e-12)


def test_calibration_errors(tmp_path, fixtures_dir):
    with pytest.raises(CalibrationParseError, match="separator"):
        parse_calib_text("no separator here\n")
    root = tmp_path / "d"
    shutil.copytree(fixtures_dir / "kitti_min", root)
    (root / "calib_velo_to_cam.txt").write_text("R: 1 0 0\nT: 0 0 0\n")
    with pytest.raises(CalibrationParseError, match="'R'"):
        load_calibration(root)
    (root / "calib_velo_to_cam.txt").unlink()
    with pytest.raises(MissingFile):
        load_calibration(root)


def test_stereo_offset_and_rectification(tmp_path, fixtures_dir):
    root = tmp_path / "d"
    shutil.copytree(fixtures_dir / "kitti_min", root)
    text = (root / "calib_cam_to_cam.txt").read_text().replace(
        "P_rect_02: 1.000000e+02 0.000000e+00 1.500000e+00 0.000000e+00",
        "P_rect_02: 1.000000e+02 0.000000e+00 1.500000e+00 5.000000e+01")
    (root / "calib_cam_to_cam.txt").write_text(text)
    calib = load_calibration(root)
    np.testing.assert_allclose(calib.T_lidar2cam.t, [0.6, -0.2, 0.3], atol=1e-12)


def test_missing_imu_calibration_warns(tmp_path, fixtures_dir):
    root = tmp_path / "d"
    shutil.copytree(fixtures_dir / "kitti_min", root)
    (root / "calib_imu_to_velo.txt").unlink()
    with pytest.warns(UserWarning, match="identity"):
        calib = load_calibration(root)
    assert calib.T_imu2cam == RigidTransform.identity()


# --- sequences ----------------------------------------------------------------------------


def test_minimal_fixture_manifest(fixtures_dir):
    seq = load_kitti_sequence(fixtures_dir / "kitti_min")
    assert len(seq) == 2 and len(seq.manifest.frames) == 2
    assert [len(seq.cloud(i)) for i in range(2)] == [4, 4]
    assert seq.timestamps[1] - seq.timestamps[0] == pytest.approx(0.104097266)
    assert seq.image(0).shape == (3, 4)
    assert seq.manifest.frames[0].imu_span == (0, 2)
    assert '"camera": 2' in seq.manifest.to_json()
    ctx = seq.context()
    assert len(ctx) == 2 and ctx.clouds[1] is seq.cloud(1)


def test_missing_paths(tmp_path, fixtures_dir):
    with pytest.raises(MissingFile, match="nowhere"):
        load_kitti_sequence(tmp_path / "nowhere")
    root = tmp_path / "d"
    shutil.copytree(fixtures_dir / "kitti_min", root)
    (root / "velodyne_points/data/0000000001.bin").unlink()
    with pytest.raises(MissingFile, match="0000000001.bin"):
        load_kitti_sequence(root)


def test_kitti_round_trip_is_byte_exact(tmp_path, fixtures_dir):
    src = fixtures_dir / "kitti_synth"
    seq = load_kitti_sequence(src)
    c = seq.calibration
    T_imu2velo = RigidTransform(np.linalg.inv(c.T_lidar2cam.m) @ c.T_imu2cam.m)
    write_kitti_sequence(tmp_path, seq.images(), [seq.cloud(i) for i in range(len(seq))],
                         seq.imu_records, seq.timestamps, c.K, c.T_lidar2cam, T_imu2velo)
    for p in sorted((src / "velodyne_points/data").iterdir()):
        assert (tmp_path / "velodyne_points/data" / p.name).read_bytes() == p.read_bytes()
    again = load_kitti_sequence(tmp_path)
    assert again.imu_records == seq.imu_records
    assert again.timestamps == pytest.approx(seq.timestamps, abs=1e-9)
    assert again.calibration.K == c.K
    assert again.calibration.T_lidar2cam.allclose(c.T_lidar2cam, 1e-12)
    for i in range(len(seq)):
        np.testing.assert_array_equal(again.image(i), seq.image(i))


# --- images ------------------------------------------------------------------------------


def test_image_fixtures(fixtures_dir):
    black = read_image(fixtures_dir / "black_1x1.png")
    assert black.shape == (1, 1) and black[0, 0] == 0
    rgb = read_image(fixtures_dir / "rgb_3x2.png")
    expected = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]],
                         [[0, 0, 0], [128, 64, 32], [255, 255, 255]]], np.float32) / 255
    np.testing.assert_array_equal(rgb, expected)


@given(st.integers(0, 2**32 - 1), st.sampled_from([None, 3]))
@settings(max_examples=25, deadline=None)
def test_image_round_trip(seed, channels):
    rng = np.random.default_rng(seed)
    img = rng.random((5, 7) if channels is None else (5, 7, channels)).astype(np.float32)
    back = decode_image(encode_png(img))
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7


def test_image_errors(tmp_path):
    with pytest.raises(DecodeError):
        decode_image(b"not a png")
    with pytest.raises(MissingFile):
        read_image(tmp_path / "none.png")
    np.testing.assert_array_equal(to_uint8(np.array([-1.0, 0.5, 2.0])), [0, 128, 255])
    write_image(np.zeros((2, 2)), tmp_path / "z.png")
    assert read_image(tmp_path / "z.png").shape == (2, 2)


# --- synthetic ---------------------------------------------------------------------------


def small_spec(**kw):
    base = dict(seed=5, frames=3, width=48, height=32, num_points=1500)
    base.update(kw)
    return SyntheticSceneSpec(**base)


def test_static_trajectory():
    s = generate_synthetic(small_spec(translation=(0, 0, 0), yaw=0.0))
    assert all(e.T == RigidTransform.identity() for e in s.egomotions)
    for f in s.gt_fields:
        assert not f.du.any() and not f.dv.any()


def test_lateral_translation_flow_is_constant_on_a_plane():
    plane = {"type": "quad", "origin": (20.0, -50.0, -50.0), "e1": (0.0, 100.0, 0.0),
             "e2": (0.0, 0.0, 100.0)}
    s = generate_synthetic(small_spec(primitives=[plane], translation=(0.0, 0.5, 0.0), yaw=0.0))
    E = s.egomotions[0].T
    np.testing.assert_allclose(E.t, [0.5, 0, 0], atol=1e-12)
    f = s.gt_fields[0]
    assert f.valid.all()
    z = f.depth[0, 0]
    np.testing.assert_allclose(f.depth, z, rtol=1e-12)
    np.testing.assert_allclose(f.du, s.K.fx * 0.5 / z, rtol=1e-12)
    np.testing.assert_allclose(f.dv, 0.0, atol=1e-12)


def test_imu_records_integrate_to_egomotion():
    from lidarflow.egomotion import integrate_imu

    s = generate_synthetic(small_spec(yaw=0.02, pitch=0.01, roll=-0.01))
    est = integrate_imu(s.imu_records, s.timestamps[0], s.timestamps[1], s.T_imu2cam)
    assert est.T.allclose(s.egomotions[0].T, atol=1e-12)


def test_generation_is_deterministic():
    a = generate_synthetic(small_spec(noise_sigma=0.05))
    b = generate_synthetic(small_spec(noise_sigma=0.05))
    assert a.digest() == b.digest()
    assert generate_synthetic(small_spec(seed=6)).digest() != a.digest()


def test_invalid_specs(tmp_path):
    for kw in ({"frames": 1}, {"num_points": 0}, {"width": 8}, {"downsample": 5},
               {"blur_sigma": [1.0, 2.0]}, {"channels": 2}):
        with pytest.raises(InvalidSpec):
            generate_synthetic(small_spec(**kw))
    with pytest.raises(InvalidSpec):
        SyntheticSceneSpec.from_dict({"bogus": 1})
    p = tmp_path / "s.json"
    p.write_text("{not json")
    with pytest.raises(InvalidSpec):
        SyntheticSceneSpec.load(p)
    p = tmp_path / "s.toml"
    p.write_text("seed = 3\nframes = 4\ntranslation = [0.2, 0.0, 0.0]\n")
    spec = SyntheticSceneSpec.load(p)
    assert (spec.seed, spec.frames, spec.translation) == (3, 4, (0.2, 0.0, 0.0))


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_to_kitti_loads_cleanly_and_is_reproducible(tmp_path):
    spec = small_spec(downsample=2, noise_sigma=0.02)
    generate_synthetic(spec).to_kitti(tmp_path / "a")
    generate_synthetic(spec).to_kitti(tmp_path / "b")
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        seq = load_kitti_sequence(tmp_path / "a")
    assert len(seq) == 3
    assert seq.image(0).shape == (16, 24)
    assert seq.calibration.K == generate_synthetic(spec).K_frames
