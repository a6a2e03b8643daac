"""Command-line interface.

Subcommands read a drive directory in the KITTI raw layout (as written by
``lidarflow synth``) and write every result as files. Settings come from
flags, then from a ``--config`` TOML file of flat ``key = value`` pairs,
then from built-in defaults. Exit status is 0 on success, 2 on usage
errors and the error class code from :mod:`lidarflow.errors` otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .dataio.images import read_image, write_image
from .dataio.kitti import load_kitti_sequence
from .dataio.synthetic import SyntheticSceneSpec, decimate, generate_synthetic
from .enhance import (
    EnhanceTask,
    TaskKind,
    enhance_with_fields,
    upsample_bicubic,
)
from .errors import DimensionMismatch, LidarFlowError, MissingFile
from .fieldio import atomic_write_bytes, read_lfmf, write_flo, write_lfmf
from .metrics import QualityReport, REPORT_FIELDS, endpoint_error, psnr, ssim
from .motion import (
    MergeSpec,
    MotionField,
    PatchSpec,
    Variant,
    motion_between,
)
from .warp import forward_warp

DEFAULTS = {
    "variant": "MPC_IMU",
    "clouds": 5,
    "patch": None,  # per task: 3 for superres, 7 otherwise
    "task": "denoise",
    "window": 5,
    "sr_factor": 2,
    "jobs": 1,
    "seed": 0,
    "camera": 2,
    "noise_sigma": 0.1,
    "blur_sigma": 1.5,
    "axis": "patch",
    "values": "1,3,5,7",
    "frames": None,
}


class UsageError(Exception):
    exit_code = 2


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        text = Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingFile(path, "config file") from None
    try:
        data = tomllib.loads(text.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise UsageError(f"{path}: {e}") from None
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    return data


@dataclass
class RunConfig:
    variant: Variant
    merge: MergeSpec
    patch: PatchSpec
    task: EnhanceTask
    jobs: int
    seed: int
    camera: int
    noise_sigma: float
    blur_sigma: float
    axis: str
    values: list
    frames: object


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    items = [t for t in str(text).replace(" ", "").split(",") if t]
    return [int(t) for t in items]


def resolve_config(args) -> RunConfig:
    """Merge flags, config file and defaults; reject invalid combinations."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        merged.update(_load_toml(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    try:
        task = EnhanceTask(merged["task"], int(merged["window"]), int(merged["sr_factor"]))
        patch = PatchSpec(int(merged["patch"])) if merged["patch"] is not None else task.patch
        values = _int_list(merged["values"])
        axis = str(merged["axis"]).lower()
        if axis not in ("patch", "clouds"):
            raise ValueError(f"axis must be 'patch' or 'clouds', got {axis!r}")
        cfg = RunConfig(
            variant=Variant.parse(merged["variant"]),
            merge=MergeSpec(int(merged["clouds"])),
            patch=patch,
            task=task,
            jobs=max(1, int(merged["jobs"])),
            seed=int(merged["seed"]),
            camera=int(merged["camera"]),
            noise_sigma=float(merged["noise_sigma"]),
            blur_sigma=float(merged["blur_sigma"]),
            axis=axis,
            values=values,
            frames=merged["frames"],
        )
    except LidarFlowError as e:
        raise UsageError(str(e)) from None
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None
    if cfg.noise_sigma < 0 or cfg.blur_sigma < 0:
        raise UsageError("noise and blur sigmas must be non-negative")
    return cfg


def _frame_selection(spec, n, last):
    """Parse ``START:STOP`` or a comma list; default every frame up to ``last``."""
    if spec is None:
        return list(range(last + 1))
    text = str(spec)
    if ":" in text:
        a, _, b = text.partition(":")
        sel = list(range(int(a or 0), int(b) if b else last + 1))
    else:
        sel = _int_list(text)
    bad = [k for k in sel if not 0 <= k <= last]
    if bad:
        raise UsageError(f"frames {bad} outside 0..{last}")
    return sel


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _map(jobs, fn, items):
    if jobs <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


def _csv_bytes(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode()


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return v


def _write_csv(path, header, rows):
    atomic_write_bytes(path, _csv_bytes(header, rows))


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(root, camera):
    return load_kitti_sequence(root, camera=camera)


def _prefetch(ctx, steps, t, variant, merge):
    """Load clouds and evaluate egomotions the kernel will touch."""
    half = merge.num_clouds // 2 if variant is Variant.MPC_IMU else 0
    lo, hi = max(0, t - half), min(len(ctx) - 1, t + max(half, 1))
    for k in range(lo, hi + 1):
        ctx.clouds[k]
    for k in range(lo, hi):
        steps[k]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_estimate(args, cfg: RunConfig):
    seq = _load(args.root, cfg.camera)
    ctx = seq.context()
    out = _out_dir(args)
    (out / "fields").mkdir(exist_ok=True)
    steps = ctx.steps(cfg.variant)
    targets = _frame_selection(cfg.frames, len(seq), len(seq) - 2)

    def one(t):
        _prefetch(ctx, steps, t, cfg.variant, cfg.merge)
        t0 = time.perf_counter_ns()
        field = motion_between(ctx, t, t + 1, cfg.variant, cfg.merge, cfg.patch)
        runtime_us = (time.perf_counter_ns() - t0) / 1000.0
        write_lfmf(field, out / "fields" / f"{t:010d}.lfmf")
        if args.flo:
            write_flo(field, out / "fields" / f"{t:010d}.flo")
        return (t, field.density, runtime_us)

    rows = _map(cfg.jobs, one, targets)
    _write_csv(out / "density.csv", ("frame", "density", "runtime_us"), rows)
    return 0


WARP_MODES = ("single", "merged", "merged_patched")


def cmd_warp(args, cfg: RunConfig):
    seq = _load(args.root, cfg.camera)
    ctx = seq.context()
    out = _out_dir(args)
    (out / "warp").mkdir(exist_ok=True)
    K = ctx.K
    targets = _frame_selection(cfg.frames, len(seq), len(seq) - 2)
    modes = {
        "single": (Variant.SPC_IMU, MergeSpec(1), PatchSpec(1)),
        "merged": (Variant.MPC_IMU, cfg.merge, PatchSpec(1)),
        "merged_patched": (Variant.MPC_IMU, cfg.merge, cfg.patch),
    }

    def one(t):
        src = seq.image(t)
        panels, rows = [], []
        for name in WARP_MODES:
            variant, merge, patch = modes[name]
            if args.zero_motion:
                field = MotionField.uniform(K.width, K.height)
            else:
                field = motion_between(ctx, t, t + 1, variant, merge, patch)
            warped = forward_warp(src, field)
            panels.append(warped.image)
            rows.append((t, name, warped.coverage_ratio, field.density))
        gap = np.ones((src.shape[0], 2) + src.shape[2:], dtype=np.float32)
        strip = np.concatenate([p for pair in zip(panels, [gap] * 3) for p in pair][:-1], axis=1)
        write_image(strip, out / "warp" / f"{t:010d}.png")
        return rows

    rows = [r for group in _map(cfg.jobs, one, targets) for r in group]
    _write_csv(out / "coverage.csv", ("frame", "mode", "coverage", "density"), rows)
    return 0


@dataclass
class _EnhanceInputs:
    ctx: object
    frames: list  # degraded inputs at estimation resolution
    reference: list  # ground truth at output resolution


def _degrade(img, k, task, cfg, rng):
    if task.kind is TaskKind.DENOISE:
        noisy = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
        return np.clip(noisy, 0.0, 1.0).astype(np.float32)
    if task.kind is TaskKind.DEBLUR_PROXY:
        if k % 2 == 1 and cfg.blur_sigma > 0:
            sig = (cfg.blur_sigma, cfg.blur_sigma) + ((0,) if img.ndim == 3 else ())
            return ndimage.gaussian_filter(img.astype(np.float64), sig, mode="nearest").astype(np.float32)
        return img
    return img


def prepare_enhance(root, cfg: RunConfig) -> _EnhanceInputs:
    """Load frames plus a reference for scoring.

    A ``ground_truth/clean`` directory (written by ``synth``) supplies the
    reference and the frames are used as recorded. Otherwise the recorded
    frames are the reference and the inputs are degraded in memory: seeded
    Gaussian noise (denoise), blur of odd frames (deblur_proxy) or
    decimation (superres).
    """
    seq = _load(root, cfg.camera)
    task = cfg.task
    frames = seq.images()
    clean_dir = Path(root) / "ground_truth" / "clean"
    K = seq.calibration.K
    if clean_dir.is_dir():
        reference = [read_image(clean_dir / Path(f.image).name) for f in seq.manifest.frames]
    else:
        reference = frames
        rng = np.random.default_rng(cfg.seed)
        frames = [_degrade(img, k, task, cfg, rng) for k, img in enumerate(frames)]
    f = task.factor
    ref_hw, in_hw = reference[0].shape[:2], frames[0].shape[:2]
    if f > 1:
        if ref_hw == in_hw:
            h, w = (in_hw[0] // f) * f, (in_hw[1] // f) * f
            reference = [r[:h, :w] for r in reference]
            frames = [decimate(img[:h, :w], f).astype(np.float32) for img in frames]
            K = K.scaled(f)
        elif ref_hw != (in_hw[0] * f, in_hw[1] * f):
            raise DimensionMismatch(f"reference {ref_hw} is not {f}x the frames {in_hw}")
    elif ref_hw != in_hw:
        raise DimensionMismatch(f"reference {ref_hw} differs from frames {in_hw}")
    return _EnhanceInputs(seq.context(K=K), frames, reference)


def _baseline(task, img):
    return upsample_bicubic(img, task.sr_factor) if task.kind is TaskKind.SUPERRES else img


def enhance_reports(inputs: _EnhanceInputs, cfg: RunConfig, targets, zero_motion=False,
                    patch=None, merge=None, out_dir=None):
    """Enhance ``targets``; returns (frame, source, QualityReport) rows.

    The density column is that of the frame's own forward field (t -> t+1,
    or t -> t-1 for the last frame) under the same settings.
    """
    patch = patch or cfg.patch
    merge = merge or cfg.merge
    ctx, frames, reference = inputs.ctx, inputs.frames, inputs.reference
    source = "zero_motion" if zero_motion else cfg.variant.value

    def one(t):
        img, _ = enhance_with_fields(ctx, frames, t, cfg.task, cfg.variant, merge, patch, zero_motion)
        if out_dir is not None:
            write_image(img, out_dir / f"{t:010d}.png")
        base = _baseline(cfg.task, frames[t])
        ref = reference[t]
        density = math.nan
        if not zero_motion and len(frames) > 1:
            dst = t + 1 if t + 1 < len(frames) else t - 1
            density = motion_between(ctx, t, dst, cfg.variant, merge, patch).density
        return [
            (t, "input", QualityReport(psnr(base, ref), ssim(base, ref))),
            (t, source, QualityReport(psnr(img, ref), ssim(img, ref), density=density)),
        ]

    return [r for group in _map(cfg.jobs, one, targets) for r in group]


def _report_rows(rows):
    return [(t, src) + tuple(rep.as_row()) for t, src, rep in rows]


def cmd_enhance(args, cfg: RunConfig):
    inputs = prepare_enhance(args.root, cfg)
    out = _out_dir(args)
    img_dir = out / "enhanced"
    img_dir.mkdir(exist_ok=True)
    targets = _frame_selection(cfg.frames, len(inputs.frames), len(inputs.frames) - 1)
    rows = enhance_reports(inputs, cfg, targets, args.zero_motion, out_dir=img_dir)
    _write_csv(out / "quality.csv", ("frame", "source") + REPORT_FIELDS, _report_rows(rows))
    return 0


def cmd_sweep(args, cfg: RunConfig):
    if not cfg.values:
        raise UsageError("sweep needs at least one value")
    inputs = prepare_enhance(args.root, cfg)
    targets = _frame_selection(cfg.frames, len(inputs.frames), len(inputs.frames) - 1)
    out_rows = []
    for v in cfg.values:
        try:
            if cfg.axis == "patch":
                patch, merge = PatchSpec(v), cfg.merge
            else:
                patch, merge = cfg.patch, MergeSpec(v)
        except ValueError as e:
            raise UsageError(str(e)) from None
        rows = enhance_reports(inputs, cfg, targets, patch=patch, merge=merge)
        reps = [rep for _, src, rep in rows if src != "input"]
        out_rows.append((
            v,
            float(np.mean([r.psnr_db for r in reps])),
            float(np.mean([r.ssim for r in reps])),
            float(np.nanmean([r.density for r in reps])) if any(
                not math.isnan(r.density) for r in reps) else math.nan,
        ))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, (cfg.axis, "psnr_db", "ssim", "density"), out_rows)
    return 0


def cmd_synth(args, cfg: RunConfig):
    spec = SyntheticSceneSpec.load(args.spec) if args.spec else SyntheticSceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    for key in ("frames", "num_points", "noise_sigma", "downsample"):
        val = getattr(args, f"synth_{key}", None)
        if val is not None:
            setattr(spec, key, val)
    seq = generate_synthetic(spec)
    seq.to_kitti(_out_dir(args))
    return 0


def cmd_eval(args, cfg: RunConfig):
    """Score result files against same-named reference files (PNG or LFMF)."""
    res_dir, ref_dir = Path(args.result), Path(args.reference)
    for d in (res_dir, ref_dir):
        if not d.is_dir():
            raise MissingFile(d, "directory")
    rows = []
    for path in sorted(res_dir.iterdir()):
        ref = ref_dir / path.name
        if path.suffix not in (".png", ".lfmf") or not ref.is_file():
            continue
        if path.suffix == ".png":
            a, b = read_image(path), read_image(ref)
            rows.append((path.stem, QualityReport(psnr(a, b), ssim(a, b))))
        else:
            rows.append((path.stem, endpoint_error(read_lfmf(path), read_lfmf(ref))))
    if not rows:
        raise MissingFile(ref_dir, "reference files matching the results")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".json":
        data = [dict(frame=k, **rep.to_dict()) for k, rep in rows]
        atomic_write_bytes(out, json.dumps(data, indent=2).encode())
    else:
        _write_csv(out, ("frame",) + REPORT_FIELDS, [(k,) + tuple(r.as_row()) for k, r in rows])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="lidarflow", description="LiDAR + IMU motion fields for video enhancement.")
    p.add_argument("--version", action="version", version=f"lidarflow {__version__}")
    p.add_argument("--config", help="TOML file of flat key = value settings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("root", help="drive directory in the KITTI raw layout")
        sp.add_argument("--out", required=True, help=out_help)
        sp.add_argument("--variant", help="SPC_IMU, SPC_R or MPC_IMU (default MPC_IMU)")
        sp.add_argument("--clouds", type=int, help="number of merged clouds, odd (default 5)")
        sp.add_argument("--patch", type=int, help="patch side, odd (default 3 superres / 7 otherwise)")
        sp.add_argument("--jobs", type=int, help="frames processed in parallel")
        sp.add_argument("--camera", type=int, help="KITTI camera index (default 2)")
        sp.add_argument("--frames", help="frame selection: START:STOP or a comma list")
        sp.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    def task_flags(sp):
        sp.add_argument("--task", help="denoise, superres or deblur_proxy")
        sp.add_argument("--window", type=int, help="odd frame window (default 5)")
        sp.add_argument("--sr-factor", dest="sr_factor", type=int, help="upscale factor (default 2)")
        sp.add_argument("--seed", type=int, help="seed for in-memory degradation")
        sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
        sp.add_argument("--blur-sigma", dest="blur_sigma", type=float)

    sp = sub.add_parser("estimate", help="motion fields t -> t+1 and density/runtime CSV")
    common(sp, "output directory")
    sp.add_argument("--flo", action="store_true", help="also write .flo files")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("warp", help="forward-warp triplets and coverage CSV")
    common(sp, "output directory")
    sp.add_argument("--zero-motion", action="store_true")
    sp.set_defaults(func=cmd_warp)

    sp = sub.add_parser("enhance", help="enhanced frames and quality CSV")
    common(sp, "output directory")
    task_flags(sp)
    sp.add_argument("--zero-motion", action="store_true", help="fuse without motion compensation")
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("sweep", help="sensitivity sweep over patch size or merged clouds")
    common(sp, "output CSV path")
    task_flags(sp)
    sp.add_argument("--axis", choices=("patch", "clouds"))
    sp.add_argument("--values", help="comma-separated odd values (default 1,3,5,7)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("synth", help="write a synthetic sequence in the KITTI raw layout")
    sp.add_argument("spec", nargs="?", help="scene spec (JSON or TOML); defaults if omitted")
    sp.add_argument("--out", required=True, help="output drive directory")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--frames", dest="synth_frames", type=int)
    sp.add_argument("--num-points", dest="synth_num_points", type=int)
    sp.add_argument("--noise-sigma", dest="synth_noise_sigma", type=float)
    sp.add_argument("--downsample", dest="synth_downsample", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("eval", help="PSNR/SSIM or EPE of result files against references")
    sp.add_argument("result", help="directory of results (.png or .lfmf)")
    sp.add_argument("reference", help="directory of same-named references")
    sp.add_argument("--out", required=True, help="report path (.csv or .json)")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args) if args.command not in ("synth", "eval") else None
        return args.func(args, cfg)
    except UsageError as e:
        print(f"lidarflow: usage error: {e}", file=sys.stderr)
        return UsageError.exit_code
    except LidarFlowError as e:
        print(f"lidarflow: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # noqa: BLE001 - last-resort diagnostic
        print(f"lidarflow: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
