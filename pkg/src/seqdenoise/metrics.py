"""Fidelity metrics and line-profile extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.signal import convolve2d


@dataclass
class MetricReport:
    psnr_per_frame: List[float] = field(default_factory=list)
    ssim_per_frame: List[float] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_per_frame))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self.psnr_per_frame))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_per_frame))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim_per_frame))


@dataclass
class LineProfile:
    p0: Tuple[float, float]
    p1: Tuple[float, float]
    samples: np.ndarray


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE); +inf for identical inputs."""
    if a.shape != b.shape:
        raise ValueError("images have mismatched shapes")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Windowed structural similarity with an 11-tap Gaussian (sigma 1.5) and
    the customary stabilizers K1=0.01, K2=0.03; mean over the valid region."""
    if a.shape != b.shape:
        raise ValueError("images have mismatched shapes")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    window = _gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    mu_a = convolve2d(a, window, mode="valid")
    mu_b = convolve2d(b, window, mode="valid")
    mu_aa = convolve2d(a * a, window, mode="valid")
    mu_bb = convolve2d(b * b, window, mode="valid")
    mu_ab = convolve2d(a * b, window, mode="valid")

    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b

    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def line_profile(image: np.ndarray, p0: Tuple[float, float],
                 p1: Tuple[float, float]) -> LineProfile:
    """Bilinear intensity samples at unit spacing along the segment p0->p1.

    Endpoints are (row, col); sample count is round(length) + 1 and both
    endpoints are included.
    """
    r0, c0 = p0
    r1, c1 = p1
    length = math.hypot(r1 - r0, c1 - c0)
    n = int(round(length)) + 1
    ts = np.linspace(0.0, 1.0, n)
    rows = r0 + ts * (r1 - r0)
    cols = c0 + ts * (c1 - c0)
    from .flow import _bilinear
    samples = _bilinear(np.asarray(image, dtype=np.float64), rows, cols)
    return LineProfile(p0=p0, p1=p1, samples=samples)


def sequence_metrics(denoised: np.ndarray, reference: np.ndarray,
                     frame_indices=None) -> MetricReport:
    """Per-frame PSNR/SSIM of a denoised stack against a reference stack."""
    if denoised.shape != reference.shape:
        raise ValueError("sequence shapes differ")
    if frame_indices is None:
        frame_indices = range(denoised.shape[0])
    report = MetricReport()
    for i in frame_indices:
        report.psnr_per_frame.append(psnr(denoised[i], reference[i]))
        report.ssim_per_frame.append(ssim(denoised[i], reference[i]))
    return report
