"""Image quality (PSNR, SSIM) and motion-field endpoint error."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, ImageTooSmall
from .motion import MotionField

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

REPORT_FIELDS = ("psnr_db", "ssim", "epe", "density")


@dataclass
class QualityReport:
    psnr_db: float = math.nan
    ssim: float = math.nan
    epe: float = math.nan
    density: float = math.nan

    def as_row(self):
        return [getattr(self, k) for k in REPORT_FIELDS]

    def to_dict(self):
        # JSON has no inf/nan literals: inf -> "inf", nan -> null
        out = {}
        for k in REPORT_FIELDS:
            v = float(getattr(self, k))
            if math.isnan(v):
                out[k] = None
            elif math.isinf(v):
                out[k] = "inf" if v > 0 else "-inf"
            else:
                out[k] = v
        return out


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """10 log10(1 / MSE) over all samples and channels; +inf when identical."""
    m = mse(a, b)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] == 1:
            return img[..., 0]
        return img @ LUMA_WEIGHTS
    return img


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, cropped to windows that fit inside the image
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, g, axis=1, mode="nearest")
    return out[r:-r, r:-r]


def ssim_map(a, b):
    a, b = _pair(to_luma(a), to_luma(b))
    if min(a.shape) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b) -> float:
    """Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, range 1.

    Mean over every window position fully inside the image. RGB inputs are
    reduced to BT.601 luma first.
    """
    a64, b64 = _pair(a, b)
    if np.array_equal(a64, b64):
        if min(a64.shape[:2]) < SSIM_WINDOW:
            raise ImageTooSmall(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
        return 1.0
    return float(np.clip(ssim_map(a64, b64).mean(), -1.0, 1.0))


def endpoint_error(est: MotionField, gt: MotionField) -> QualityReport:
    """Mean endpoint error over pixels valid in both fields, plus ``est`` density."""
    if est.shape != gt.shape:
        raise DimensionMismatch(f"field shapes differ: {est.shape} vs {gt.shape}")
    both = est.valid & gt.valid
    if both.any():
        e = np.hypot(est.du[both] - gt.du[both], est.dv[both] - gt.dv[both])
        epe = float(e.mean())
    else:
        epe = math.nan
    return QualityReport(epe=epe, density=est.density)


def quality(result, reference) -> QualityReport:
    return QualityReport(psnr_db=psnr(result, reference), ssim=ssim(result, reference))


def write_reports_csv(path, rows, key_fields=("frame",)):
    """``rows``: iterable of (key tuple, QualityReport)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(key_fields) + list(REPORT_FIELDS))
        for key, rep in rows:
            key = key if isinstance(key, tuple) else (key,)
            w.writerow(list(key) + rep.as_row())


def write_reports_json(path, rows, key_fields=("frame",)):
    out = []
    for key, rep in rows:
        key = key if isinstance(key, tuple) else (key,)
        d = dict(zip(key_fields, key))
        d.update(rep.to_dict())
        out.append(d)
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
