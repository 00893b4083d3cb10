"""Synthetic dynamic phantom: moving lesions and a needle over a static
textured background, plus dose-dependent Poisson/Gaussian noise.

Every frame value is a normalized intensity in [0, 1].  The clean scene is
rendered analytically (soft-edged disks and a capsule segment) so objects can
follow sub-pixel sinusoidal translation paths with a known ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter


class PhantomConfigError(ValueError):
    """Geometry or dose parameters that cannot produce a valid sequence."""


@dataclass(frozen=True)
class PhantomSpec:
    """Scene description for the dynamic phantom.

    Objects (lesion disks plus one needle segment) translate together along a
    circular sinusoidal path of per-axis amplitude ``motion_amplitude`` and
    period ``motion_period`` frames; the textured background stays static.
    """

    height: int = 96
    width: int = 96
    num_frames: int = 20
    lesion_radii: Tuple[float, ...] = (7.0, 4.0)
    needle_length: float = 24.0
    needle_width: float = 2.0
    motion_amplitude: float = 6.0
    motion_period: float = 20.0
    background_texture_scale: float = 1.0
    intensity_range: Tuple[float, float] = (0.1, 0.9)
    # Per-axis phases (row, col) of the sinusoidal path.  The (pi/2, 0)
    # default traces a circle of radius motion_amplitude, so poses half a
    # period apart are exactly 2*motion_amplitude px apart at every frame.
    motion_phase: Tuple[float, float] = (math.pi / 2.0, 0.0)

    def __post_init__(self):
        if self.num_frames < 5:
            raise PhantomConfigError("num_frames must be >= 5")
        if self.motion_amplitude < 0:
            raise PhantomConfigError("motion_amplitude must be >= 0")
        if self.motion_period <= 0:
            raise PhantomConfigError("motion_period must be > 0")
        lo, hi = self.intensity_range
        if not (0.0 <= lo < hi <= 1.0):
            raise PhantomConfigError("intensity_range must satisfy 0 <= lo < hi <= 1")
        _validate_geometry(self)


@dataclass(frozen=True)
class DoseLevel:
    """Poisson photon scale plus additive Gaussian read noise."""

    photons_per_unit_intensity: float
    read_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.photons_per_unit_intensity <= 0:
            raise PhantomConfigError("photons_per_unit_intensity must be > 0")
        if self.read_noise_sigma < 0:
            raise PhantomConfigError("read_noise_sigma must be >= 0")


# Default doses: "low" is tuned so the noisy input sits around 28-32 dB PSNR
# against the clean signal; "high" carries 10x the photon count and is used
# for evaluation only, never inside a training loss.
LOW_DOSE = DoseLevel(photons_per_unit_intensity=500.0, read_noise_sigma=0.002)
HIGH_DOSE = DoseLevel(photons_per_unit_intensity=5000.0, read_noise_sigma=0.002)


@dataclass
class FrameSequence:
    """Ordered stack of 2D grayscale frames with dose metadata.

    ``frames`` has shape (num_frames, height, width), float64 in [0, 1].
    ``dose`` is either a DoseLevel or the string "clean".
    """

    frames: np.ndarray
    dose: Union[DoseLevel, str]
    seed: int
    spec_hash: Optional[str] = None

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> Tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def object_offset(spec: PhantomSpec, frame_index: float) -> Tuple[float, float]:
    """Analytic (dy, dx) translation of the moving objects at a frame index.

    This is the ground-truth motion used by flow and warping tests.
    """
    theta = 2.0 * math.pi * frame_index / spec.motion_period
    dy = spec.motion_amplitude * math.sin(theta + spec.motion_phase[0])
    dx = spec.motion_amplitude * math.sin(theta + spec.motion_phase[1])
    return dy, dx


def lesion_centers(spec: PhantomSpec) -> List[Tuple[float, float]]:
    """Rest-pose lesion centers, evenly spread on a ring around the frame center."""
    cy, cx = (spec.height - 1) / 2.0, (spec.width - 1) / 2.0
    ring = 0.27 * min(spec.height, spec.width)
    k = len(spec.lesion_radii)
    centers = []
    for i in range(k):
        phi = 2.0 * math.pi * i / max(k, 1) + math.pi / 5.0
        centers.append((cy + ring * math.sin(phi), cx + ring * math.cos(phi)))
    return centers


def needle_endpoints(spec: PhantomSpec) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Rest-pose needle segment (tip, tail) in (row, col) coordinates."""
    cy, cx = (spec.height - 1) / 2.0, (spec.width - 1) / 2.0
    ang = math.radians(40.0)
    tip = (cy, cx)
    tail = (cy - spec.needle_length * math.sin(ang), cx - spec.needle_length * math.cos(ang))
    return tip, tail


def _validate_geometry(spec: PhantomSpec) -> None:
    margin = 2.0
    amp = spec.motion_amplitude

    def check(y: float, x: float, extent: float, what: str) -> None:
        if not (extent + amp + margin <= y <= spec.height - 1 - extent - amp - margin and
                extent + amp + margin <= x <= spec.width - 1 - extent - amp - margin):
            raise PhantomConfigError(
                f"{what} at ({y:.1f}, {x:.1f}) with extent {extent:.1f} leaves the "
                f"{spec.height}x{spec.width} frame for amplitude {amp:.1f}")

    for r, (y, x) in zip(spec.lesion_radii, lesion_centers(spec)):
        if r <= 0:
            raise PhantomConfigError("lesion radii must be > 0")
        check(y, x, r, "lesion")
    if spec.needle_length > 0:
        half_w = spec.needle_width / 2.0
        for y, x in needle_endpoints(spec):
            check(y, x, half_w, "needle endpoint")


def _soft_disk(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, radius: float) -> np.ndarray:
    # 1 px linear edge so sub-pixel translation moves the rendered mass smoothly
    dist = np.hypot(yy - cy, xx - cx)
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def _soft_capsule(yy, xx, p0, p1, width):
    dy, dx = p1[0] - p0[0], p1[1] - p0[1]
    norm2 = dy * dy + dx * dx
    if norm2 == 0:
        return _soft_disk(yy, xx, p0[0], p0[1], width / 2.0)
    t = ((yy - p0[0]) * dy + (xx - p0[1]) * dx) / norm2
    t = np.clip(t, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * dy), xx - (p0[1] + t * dx))
    return np.clip(width / 2.0 - dist + 0.5, 0.0, 1.0)


def _background(spec: PhantomSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x0BAC])
    noise = rng.standard_normal((spec.height, spec.width))
    sigma = max(2.0, 0.05 * min(spec.height, spec.width))
    tex = gaussian_filter(noise, sigma=sigma)
    std = tex.std()
    if std > 0:
        tex = tex / std
    return 0.5 + 0.07 * spec.background_texture_scale * tex


def render_clean_frame(spec: PhantomSpec, frame_index: float, background: np.ndarray) -> np.ndarray:
    dy, dx = object_offset(spec, frame_index)
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    img = background.copy()
    for r, (cy, cx) in zip(spec.lesion_radii, lesion_centers(spec)):
        img += 0.22 * _soft_disk(yy, xx, cy + dy, cx + dx, r)
    if spec.needle_length > 0:
        tip, tail = needle_endpoints(spec)
        p0 = (tip[0] + dy, tip[1] + dx)
        p1 = (tail[0] + dy, tail[1] + dx)
        img -= 0.35 * _soft_capsule(yy, xx, p0, p1, spec.needle_width)
    img = np.clip(img, 0.0, 1.0)
    lo, hi = spec.intensity_range
    return lo + (hi - lo) * img


def generate_clean_sequence(spec: PhantomSpec, seed: int) -> FrameSequence:
    """Render the noise-free sequence for (spec, seed); bit-deterministic."""
    background = _background(spec, seed)
    frames = np.stack([render_clean_frame(spec, f, background)
                       for f in range(spec.num_frames)])
    return FrameSequence(frames=frames, dose="clean", seed=seed)


def apply_dose_noise(clean: FrameSequence, dose: DoseLevel, seed: int) -> FrameSequence:
    """Poisson photon noise plus Gaussian read noise, independent per frame.

    Each pixel v becomes clip(Poisson(v*P)/P + N(0, sigma_read), 0, 1).  The
    per-frame RNG substream is derived as default_rng([seed, frame_index]),
    which makes frame-parallel generation safe and reproducible.
    """
    if clean.dose != "clean":
        raise ValueError("apply_dose_noise expects a clean input sequence")
    p = dose.photons_per_unit_intensity
    noisy = np.empty_like(clean.frames)
    for i, frame in enumerate(clean.frames):
        rng = np.random.default_rng([seed, i])
        counts = rng.poisson(frame * p).astype(np.float64)
        out = counts / p
        if dose.read_noise_sigma > 0:
            out = out + rng.normal(0.0, dose.read_noise_sigma, size=frame.shape)
        noisy[i] = np.clip(out, 0.0, 1.0)
    return FrameSequence(frames=noisy, dose=dose, seed=seed, spec_hash=clean.spec_hash)


def clean_discrepancy(clean: FrameSequence, i: int, j: int,
                      flow=None, border: int = 0) -> float:
    """Mean |clean_j - clean_i| after optionally warping frame j onto frame i.

    ``flow`` is a FlowField mapping frame i coordinates into frame j; when
    given, frame j is backward-warped before differencing.  ``border`` rows
    and columns are excluded from the mean on every side.
    """
    frames = clean.frames
    n = frames.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"frame indices ({i}, {j}) out of range for {n} frames")
    a = frames[i]
    b = frames[j]
    if flow is not None:
        from .flow import warp
        b = warp(b, flow)
    if a.shape != b.shape:
        raise ValueError("frame shapes differ")
    diff = np.abs(b - a)
    if border > 0:
        diff = diff[border:-border, border:-border]
    return float(diff.mean())
