"""Dense optical flow estimation and backward warping.

The estimator is a classical coarse-to-fine iterative Lucas-Kanade scheme with
a Gaussian-weighted structure tensor, kept behind a small config so a learned
estimator can be plugged in later.  Flows and warps are treated as
non-differentiable constants by the training losses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .sequence_io import TrainingWindow


@dataclass
class FlowField:
    """Per-pixel displacement in pixels: u horizontal (cols), v vertical (rows)."""

    u: np.ndarray
    v: np.ndarray
    low_confidence: bool = False

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must have the same shape")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape


@dataclass(frozen=True)
class FlowEstimatorConfig:
    method: str = "lucas_kanade"
    pyramid_levels: int = 3
    iterations: int = 4
    smoothing: float = 2.0     # sigma of the Gaussian window weighting the tensor

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.method != "lucas_kanade":
            raise ValueError(f"unknown flow method {self.method!r}")


def warp(frame: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward-warp: sample ``frame`` at (r + v, c + u) with bilinear
    interpolation; sample coordinates are clamped to the frame border."""
    if frame.shape != flow.u.shape:
        raise ValueError("frame and flow shapes differ")
    if not (np.isfinite(flow.u).all() and np.isfinite(flow.v).all()):
        raise ValueError("flow contains non-finite values")
    h, w = frame.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    return _bilinear(frame, rr + flow.v, cc + flow.u)


def _bilinear(frame: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    rows = np.clip(rows, 0.0, h - 1.0)
    cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    top = frame[r0, c0] * (1 - fc) + frame[r0, c1] * fc
    bot = frame[r1, c0] * (1 - fc) + frame[r1, c1] * fc
    return top * (1 - fr) + bot * fr


def _downsample(img: np.ndarray) -> np.ndarray:
    return gaussian_filter(img, sigma=1.0, mode="nearest")[::2, ::2]


def _gradients(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(img)
    return gx, gy


def estimate_flow(reference: np.ndarray, moving: np.ndarray,
                  cfg: FlowEstimatorConfig = FlowEstimatorConfig()) -> FlowField:
    """Estimate flow so that warp(moving, flow) approximates reference."""
    if reference.shape != moving.shape:
        raise ValueError("reference and moving shapes differ")
    reference = np.asarray(reference, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    h, w = reference.shape

    # Aperture-degenerate input: no gradient anywhere, return zero flow flagged.
    grad_mag = max(float(np.abs(np.gradient(reference)[0]).max(initial=0.0)),
                   float(np.abs(np.gradient(reference)[1]).max(initial=0.0)))
    if grad_mag < 1e-8:
        return FlowField(u=np.zeros((h, w)), v=np.zeros((h, w)), low_confidence=True)

    pyr_ref = [reference]
    pyr_mov = [moving]
    for _ in range(cfg.pyramid_levels - 1):
        if min(pyr_ref[-1].shape) < 16:
            break
        pyr_ref.append(_downsample(pyr_ref[-1]))
        pyr_mov.append(_downsample(pyr_mov[-1]))

    u = np.zeros_like(pyr_ref[-1])
    v = np.zeros_like(pyr_ref[-1])
    for level in range(len(pyr_ref) - 1, -1, -1):
        ref_l, mov_l = pyr_ref[level], pyr_mov[level]
        if u.shape != ref_l.shape:
            factor = (ref_l.shape[0] / u.shape[0], ref_l.shape[1] / u.shape[1])
            u = zoom(u, factor, order=1, mode="nearest") * 2.0
            v = zoom(v, factor, order=1, mode="nearest") * 2.0
        u, v = _refine_level(ref_l, mov_l, u, v, cfg)
    return FlowField(u=u, v=v)


def _refine_level(ref, mov, u, v, cfg):
    h, w = ref.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    eps = 1e-6
    for _ in range(cfg.iterations):
        warped = _bilinear(mov, rr + v, cc + u)
        gx, gy = _gradients((warped + ref) * 0.5)
        it = warped - ref
        s = cfg.smoothing
        axx = gaussian_filter(gx * gx, s, mode="nearest") + eps
        axy = gaussian_filter(gx * gy, s, mode="nearest")
        ayy = gaussian_filter(gy * gy, s, mode="nearest") + eps
        bx = gaussian_filter(gx * it, s, mode="nearest")
        by = gaussian_filter(gy * it, s, mode="nearest")
        det = axx * ayy - axy * axy
        du = -(ayy * bx - axy * by) / det
        dv = -(axx * by - axy * bx) / det
        # Large per-iteration jumps are outside the linearization's validity.
        np.clip(du, -2.0, 2.0, out=du)
        np.clip(dv, -2.0, 2.0, out=dv)
        u = u + du
        v = v + dv
        u = gaussian_filter(u, 0.8, mode="nearest")
        v = gaussian_filter(v, 0.8, mode="nearest")
    return u, v


def compose_flows(first: FlowField, second: FlowField) -> FlowField:
    """Chain two backward flows: if ``first`` maps frame a onto frame b and
    ``second`` maps frame b onto frame c, the result maps a onto c."""
    h, w = first.u.shape
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    rows = rr + first.v
    cols = cc + first.u
    u = first.u + _bilinear(second.u, rows, cols)
    v = first.v + _bilinear(second.v, rows, cols)
    return FlowField(u=u, v=v,
                     low_confidence=first.low_confidence or second.low_confidence)


def compensate_window(window: TrainingWindow,
    cfg: FlowEstimatorConfig = FlowEstimatorConfig()) -> List[np.ndarray]:
    """Warp every context frame onto the center frame's coordinates.

    Adjacent-pair flows are estimated and composed outward, since adjacent
    displacements are smaller and better conditioned than direct +/-2
    estimation.  Returns the 5 frames in temporal order; the center frame
    passes through untouched.
    """
    if len(window.context) != 4:
        raise ValueError("compensate_window expects a 4-context window")
    xm2, xm1, xp1, xp2 = window.context
    center = window.center

    f_0_m1 = estimate_flow(center, xm1, cfg)
    f_0_p1 = estimate_flow(center, xp1, cfg)
    f_m1_m2 = estimate_flow(xm1, xm2, cfg)
    f_p1_p2 = estimate_flow(xp1, xp2, cfg)
    f_0_m2 = compose_flows(f_0_m1, f_m1_m2)
    f_0_p2 = compose_flows(f_0_p1, f_p1_p2)

    return [warp(xm2, f_0_m2), warp(xm1, f_0_m1), center,
            warp(xp1, f_0_p1), warp(xp2, f_0_p2)]


def save_flow_text(path, flow: FlowField) -> None:
    """Plain-text flow dump: a header line then the u block and the v block."""
    h, w = flow.shape
    with open(path, "w") as f:
        f.write(f"# flow {h} {w}\n# u\n")
        np.savetxt(f, flow.u, fmt="%.6f")
        f.write("# v\n")
        np.savetxt(f, flow.v, fmt="%.6f")


def load_flow_text(path) -> FlowField:
    with open(path) as f:
        header = f.read().splitlines()
    first = header[0].split()
    if len(first) != 4 or first[:2] != ["#", "flow"]:
        raise ValueError(f"{path}: not a flow dump")
    h, w = int(first[2]), int(first[3])
    rows = [line.split() for line in header if not line.startswith("#")]
    data = np.array(rows, dtype=np.float64)
    if data.shape != (2 * h, w):
        raise ValueError(f"{path}: expected {2 * h}x{w} values, got {data.shape}")
    return FlowField(u=data[:h], v=data[h:])
