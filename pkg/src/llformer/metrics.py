"""Full-reference image quality: PSNR, SSIM, MAE.

Images are ``(3, H, W)`` (or ``(H, W)`` grayscale) float arrays in [0, 1].
SSIM runs on luminance with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, L = 1, over valid window positions only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .degrade import LUMA
from .errors import ContractError, DimensionError

WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _arr(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _pair(a, b):
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; ``math.inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 3:
        return np.tensordot(LUMA, img, axes=(0, 0))
    raise DimensionError(f"expected (3, H, W) or (H, W) image, got {img.shape}")


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b) -> float:
    """Mean SSIM over luminance with a separable Gaussian window."""
    a, b = _pair(a, b)
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < WINDOW:
        raise ContractError(f"image {x.shape} smaller than the {WINDOW}x{WINDOW} SSIM window")
    if np.array_equal(x, y):
        return 1.0
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    c1, c2 = K1**2, K2**2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricRecord:
    id: str
    psnr_db: float
    ssim: float
    mae: float


@dataclass
class MetricReport:
    records: list = field(default_factory=list)

    def add(self, image_id: str, pred, ref) -> MetricRecord:
        rec = MetricRecord(str(image_id), psnr(pred, ref), ssim(pred, ref), mae(pred, ref))
        self.records.append(rec)
        return rec

    def means(self) -> dict:
        if not self.records:
            return {"psnr_db": math.nan, "ssim": math.nan, "mae": math.nan}
        return {
            "psnr_db": float(np.mean([r.psnr_db for r in self.records])),
            "ssim": float(np.mean([r.ssim for r in self.records])),
            "mae": float(np.mean([r.mae for r in self.records])),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "psnr_db", "ssim", "mae"])
        for r in self.records:
            w.writerow([r.id, _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.mae)])
        mean = self.means()
        w.writerow(["mean", _fmt(mean["psnr_db"]), _fmt(mean["ssim"]), _fmt(mean["mae"])])
        return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return f"{v:.6f}"
