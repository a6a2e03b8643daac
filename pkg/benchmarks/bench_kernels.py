"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--points 130000] [--reps 7]

Prints one line per kernel with the median time of each backend and the
speedup. Inputs mimic a KITTI-sized frame (1242x375, ~130k points).
"""

import argparse
import time

import numpy as np

from lidarflow import kernels
from lidarflow.egomotion import EgomotionEstimate, VoxelGrid
from lidarflow.geometry import CameraIntrinsics, PointCloud, RigidTransform, axis_angle_matrix
from lidarflow.motion import MergeSpec, PatchSpec, densify_patched, merge_clouds, sparse_motion

K = CameraIntrinsics(721.5, 721.5, 609.6, 172.9, 1242, 375)
L = RigidTransform.from_rt([[0, -1, 0], [0, 0, -1], [1, 0, 0]], [0, -0.08, -0.27])
E = RigidTransform.from_rt(axis_angle_matrix([0, 1, 0], 0.002), [0.01, 0, -1.0])


def lidar_sweep(rng, n):
    az = rng.uniform(-np.pi, np.pi, n)
    el = rng.uniform(-0.43, 0.03, n)
    r = rng.uniform(3, 60, n)
    return PointCloud(np.column_stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)]))


def median_ms(fn, reps):
    fn()
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(ts))


def cases(rng, n):
    pc = lidar_sweep(rng, n)
    field = sparse_motion(pc, L, E, K)
    clouds = [lidar_sweep(rng, n) for _ in range(5)]
    steps = [EgomotionEstimate(E)] * 4
    icp_pts = rng.uniform([-10, -10, -3], [10, 10, 3], (20_000, 3))
    grid = VoxelGrid(icp_pts, 0.4)
    queries = icp_pts + rng.normal(0, 0.1, icp_pts.shape)
    return {
        "sparse_motion": lambda b: sparse_motion(pc, L, E, K, backend=b),
        "patch_spread k=7": lambda b: densify_patched(field, PatchSpec(7), backend=b),
        "grid_nearest 20k": lambda b: grid.nearest(queries, 1.2, b),
        "merge5 + sparse": lambda b: sparse_motion(
            merge_clouds(clouds, steps, 2, MergeSpec(5), L), L, E, K, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=130_000)
    ap.add_argument("--reps", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = sorted(kernels.BACKENDS)
    if "cython" not in names:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<20}" + "".join(f"{n + ' ms':>14}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases(np.random.default_rng(args.seed), args.points).items():
        ms = {b: median_ms(lambda: fn(b), args.reps) for b in names}
        line = f"{label:<20}" + "".join(f"{ms[b]:>14.2f}" for b in names)
        if len(names) > 1:
            line += f"   {ms['python'] / ms['cython']:>6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
