"""Image quality metrics: PSNR, SSIM, and mean spectral angle.

Conventions: the reference scale peaks at 1.0 while noise sigmas are quoted
on the 0..255 scale, so an i.i.d. Gaussian corruption at sigma has expected
PSNR 20*log10(255/sigma). SSIM uses the standard 11x11 Gaussian window
(sigma 1.5, K1=0.01, K2=0.03) per band, averaged over bands, evaluated on
fully interior windows. Spectral angles are reported in degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionError, MetricUndefinedError, ParameterError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs must share a shape, got {a.shape} vs {b.shape}")
    return a, b


def psnr(xhat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) over all voxels, capped at 100 dB."""
    xhat, x = _check_pair(xhat, x)
    mse = float(np.mean((xhat - x) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def per_band_psnr(xhat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> list[float]:
    xhat, x = _check_pair(xhat, x)
    if xhat.ndim != 3:
        raise DimensionError(f"per-band PSNR needs an HxWxB cube, got {xhat.shape}")
    return [psnr(xhat[:, :, b], x[:, :, b], peak=peak) for b in range(xhat.shape[2])]


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Interior of a separable correlation equals 'valid' mode regardless of padding.
    half = kernel.size // 2
    smoothed = correlate1d(correlate1d(img, kernel, axis=0, mode="nearest"), kernel, axis=1, mode="nearest")
    return smoothed[half:img.shape[0] - half, half:img.shape[1] - half]


def _ssim_band(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    kernel = _gaussian_kernel()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu1 = _windowed_mean(a, kernel)
    mu2 = _windowed_mean(b, kernel)
    s11 = _windowed_mean(a * a, kernel) - mu1 * mu1
    s22 = _windowed_mean(b * b, kernel) - mu2 * mu2
    s12 = _windowed_mean(a * b, kernel) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(xhat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> float:
    """Mean SSIM, computed per band over interior windows and averaged."""
    xhat, x = _check_pair(xhat, x)
    if xhat.ndim == 2:
        xhat = xhat[:, :, None]
        x = x[:, :, None]
    if xhat.ndim != 3:
        raise DimensionError(f"SSIM needs an HxWxB cube, got {xhat.shape}")
    if xhat.shape[0] < SSIM_WINDOW or xhat.shape[1] < SSIM_WINDOW:
        raise ParameterError(
            f"spatial extent {xhat.shape[0]}x{xhat.shape[1]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return float(np.mean([_ssim_band(xhat[:, :, b], x[:, :, b], peak) for b in range(xhat.shape[2])]))


def sam(xhat: np.ndarray, x: np.ndarray) -> tuple[float, int]:
    """Mean per-pixel spectral angle in degrees, plus the skipped-pixel count.

    Pixels where either spectrum has zero norm are excluded; if every pixel is
    excluded the metric is undefined.
    """
    xhat, x = _check_pair(xhat, x)
    if xhat.ndim != 3:
        raise DimensionError(f"SAM needs an HxWxB cube, got {xhat.shape}")
    dots = np.sum(xhat * x, axis=2)
    n1 = np.sqrt(np.sum(xhat * xhat, axis=2))
    n2 = np.sqrt(np.sum(x * x, axis=2))
    valid = (n1 > 0.0) & (n2 > 0.0)
    skipped = int(valid.size - valid.sum())
    if not valid.any():
        raise MetricUndefinedError("spectral angle undefined: every pixel has a zero-norm spectrum")
    cos = np.clip(dots[valid] / (n1[valid] * n2[valid]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)).mean()), skipped


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    sam_degrees: float
    band_psnr_db: list[float] = field(default_factory=list)
    sam_skipped_pixels: int = 0

    def to_keyvalues(self) -> str:
        lines = [
            f"psnr_db = {self.psnr_db:.6f}",
            f"ssim = {self.ssim:.8f}",
            f"sam_degrees = {self.sam_degrees:.6f}",
            f"sam_skipped_pixels = {self.sam_skipped_pixels}",
        ]
        for b, value in enumerate(self.band_psnr_db):
            lines.append(f"band_psnr_db.{b} = {value:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        rows = [("band", "psnr_db")]
        rows += [(str(b), f"{v:.4f}") for b, v in enumerate(self.band_psnr_db)]
        width = max(len(r[0]) for r in rows)
        out = [f"{r[0]:>{width}}  {r[1]}" for r in rows]
        out.append("")
        out.append(f"{'psnr_db':>{width + 9}}: {self.psnr_db:.4f}")
        out.append(f"{'ssim':>{width + 9}}: {self.ssim:.6f}")
        out.append(f"{'sam_degrees':>{width + 9}}: {self.sam_degrees:.4f}")
        if self.sam_skipped_pixels:
            out.append(f"{'sam_skipped':>{width + 9}}: {self.sam_skipped_pixels}")
        return "\n".join(out) + "\n"


def evaluate(xhat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> MetricReport:
    """All metrics for one (estimate, reference) pair."""
    angle, skipped = sam(xhat, x)
    return MetricReport(
        psnr_db=psnr(xhat, x, peak=peak),
        ssim=ssim(xhat, x, peak=peak),
        sam_degrees=angle,
        band_psnr_db=per_band_psnr(xhat, x, peak=peak),
        sam_skipped_pixels=skipped,
    )
