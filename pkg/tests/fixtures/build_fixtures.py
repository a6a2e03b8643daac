"""Regenerate the checked-in fixtures: ``python3 tests/fixtures/build_fixtures.py``.

kitti_min     2 frames, 4 points per cloud, hand-chosen calibration
kitti_synth   9-frame synthetic drive (seed 7) for density trends
rgb_3x2.png   known 8-bit samples
black_1x1.png
"""

from pathlib import Path

import numpy as np
from PIL import Image

from lidarflow.dataio.synthetic import SyntheticSceneSpec, generate_synthetic

HERE = Path(__file__).resolve().parent

RGB_3X2 = np.array(
    [[[255, 0, 0], [0, 255, 0], [0, 0, 255]], [[0, 0, 0], [128, 64, 32], [255, 255, 255]]],
    dtype=np.uint8,
)

MIN_POINTS = [
    [(10.0, 0.0, 0.0, 0.5), (12.0, 1.0, -0.5, 0.25), (8.0, -1.0, 0.5, 1.0), (20.0, 0.5, 0.25, 0.0)],
    [(9.5, 0.0, 0.0, 0.5), (11.5, 1.0, -0.5, 0.25), (7.5, -1.0, 0.5, 1.0), (19.5, 0.5, 0.25, 0.0)],
]
MIN_OXTS = "49.0 8.4 115.0 0.01 0.02 1.5 4.0 3.0 5.0 0.1 0.0 0.1 0.2 9.8 0.1 0.2 9.8 0.0 0.0 0.1 0.0 0.0 0.1 0.5 0.02 4 10 4 4 4\n"
MIN_CAM = """calib_time: 09-Jan-2012 13:57:47
S_rect_02: 4.000000e+00 3.000000e+00
R_rect_00: 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00
P_rect_02: 1.000000e+02 0.000000e+00 1.500000e+00 0.000000e+00 0.000000e+00 1.000000e+02 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
"""
MIN_VELO = """calib_time: 15-Mar-2012 11:37:16
R: 0.000000e+00 -1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 -1.000000e+00 1.000000e+00 0.000000e+00 0.000000e+00
T: 1.000000e-01 -2.000000e-01 3.000000e-01
delta_f: 0.000000e+00 0.000000e+00
delta_c: 0.000000e+00 0.000000e+00
"""
MIN_IMU = """calib_time: 25-May-2012 16:47:16
R: 0.000000e+00 -1.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00
T: 1.000000e+00 2.000000e+00 3.000000e+00
"""
MIN_STAMPS = "2011-09-26 13:02:25.964389445\n2011-09-26 13:02:26.068486711\n"


def build_min(root):
    for sub in ("image_02/data", "velodyne_points/data", "oxts/data"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for k, pts in enumerate(MIN_POINTS):
        (root / "velodyne_points/data" / f"{k:010d}.bin").write_bytes(np.array(pts, "<f4").tobytes())
        (root / "oxts/data" / f"{k:010d}.txt").write_text(MIN_OXTS)
        img = np.full((3, 4), 40 * (k + 1), dtype=np.uint8)
        Image.fromarray(img).save(root / "image_02/data" / f"{k:010d}.png")
    for sub in ("image_02", "velodyne_points", "oxts"):
        (root / sub / "timestamps.txt").write_text(MIN_STAMPS)
    (root / "calib_cam_to_cam.txt").write_text(MIN_CAM)
    (root / "calib_velo_to_cam.txt").write_text(MIN_VELO)
    (root / "calib_imu_to_velo.txt").write_text(MIN_IMU)


SYNTH_SPEC = SyntheticSceneSpec(seed=7, num_points=3000, frames=9, width=96, height=72)


def main():
    build_min(HERE / "kitti_min")
    generate_synthetic(SYNTH_SPEC).to_kitti(HERE / "kitti_synth")
    Image.fromarray(RGB_3X2, "RGB").save(HERE / "rgb_3x2.png")
    Image.fromarray(np.zeros((1, 1), np.uint8), "L").save(HERE / "black_1x1.png")


if __name__ == "__main__":
    main()
