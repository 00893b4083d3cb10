"""Sequence-level inference: run a trained network or the filter branch over
a frame stack.

Boundary frames (the first and last two, which lack full 5-frame context) are
passed through unmodified and flagged in the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .flow import FlowEstimatorConfig, compensate_window
from .metrics import MetricReport, psnr, ssim
from .networks import StudentNet, TeacherNet
from .phantom import FrameSequence
from .sequence_io import make_windows
from .temporal import RecursiveFilterConfig, recursive_filter

MODES = ("teacher", "student", "filter", "full")


def _pad_to_multiple(frame: np.ndarray, div: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    h, w = frame.shape
    ph = (-h) % div
    pw = (-w) % div
    if ph or pw:
        frame = np.pad(frame, ((0, ph), (0, pw)), mode="reflect")
    return frame, (h, w)


def _net_divisor(net) -> int:
    return 2 ** (net.config.levels - 1)


def denoise_frames_teacher(seq: FrameSequence, teacher: TeacherNet,
                           half_width: int = 2) -> Tuple[np.ndarray, List[int]]:
    """Teacher prediction per interior frame; boundary frames pass through."""
    div = _net_divisor(teacher)
    out = seq.frames.copy()
    interior = []
    teacher.eval()
    with torch.no_grad():
        for window in make_windows(seq, half_width=half_width):
            padded = [_pad_to_multiple(f, div)[0] for f in window.context]
            shape = window.center.shape
            ctx = torch.from_numpy(np.stack(padded)).float()[None]
            pred = teacher(ctx)[0, 0].numpy().astype(np.float64)
            out[window.index] = pred[:shape[0], :shape[1]]
            interior.append(window.index)
    return out, interior


def denoise_frames_student(seq: FrameSequence, student: StudentNet
                           ) -> Tuple[np.ndarray, List[int]]:
    """Student output per interior frame; boundary frames pass through."""
    div = _net_divisor(student)
    out = seq.frames.copy()
    interior = list(range(2, len(seq) - 2))
    student.eval()
    with torch.no_grad():
        for i in interior:
            padded, shape = _pad_to_multiple(seq.frames[i], div)
            x = torch.from_numpy(padded).float()[None, None]
            pred = student(x)[0, 0].numpy().astype(np.float64)
            out[i] = pred[:shape[0], :shape[1]]
    return out, interior


def denoise_frames_filter(seq: FrameSequence,
                          flow_cfg: FlowEstimatorConfig = FlowEstimatorConfig(),
                          filt_cfg: RecursiveFilterConfig = RecursiveFilterConfig(),
                          motion_compensation: bool = True
                          ) -> Tuple[np.ndarray, List[int]]:
    """Motion-compensated recursive filtering per interior frame."""
    out = seq.frames.copy()
    interior = []
    for window in make_windows(seq, half_width=2):
        stack = (compensate_window(window, flow_cfg) if motion_compensation
                 else window.stack)
        out[window.index] = recursive_filter(stack, filt_cfg)
        interior.append(window.index)
    return out, interior


def stack_metrics(denoised: np.ndarray, reference: np.ndarray,
                  frame_indices: Sequence[int]) -> MetricReport:
    report = MetricReport()
    for i in frame_indices:
        report.psnr_per_frame.append(psnr(denoised[i], reference[i]))
        report.ssim_per_frame.append(ssim(denoised[i], reference[i]))
    return report


@dataclass
class DenoiseResult:
    frames: np.ndarray
    interior: List[int]
    passthrough: List[int]
    mode: str
    report: Optional[MetricReport] = None
    report_all: Optional[MetricReport] = None


def denoise(seq: FrameSequence, mode: str,
            teacher: Optional[TeacherNet] = None,
            student: Optional[StudentNet] = None,
            reference: Optional[FrameSequence] = None,
            flow_cfg: FlowEstimatorConfig = FlowEstimatorConfig(),
            filt_cfg: RecursiveFilterConfig = RecursiveFilterConfig(),
            motion_compensation: bool = True) -> DenoiseResult:
    """Run one denoising mode over a sequence.

    Modes: "teacher" (center-frame predictor), "student"/"full" (the deployed
    single-frame denoiser), "filter" (motion-compensated recursive filter,
    no checkpoints needed).  When ``reference`` is given, per-frame PSNR/SSIM
    are computed over the interior frames.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode == "teacher":
        if teacher is None:
            raise ValueError("mode 'teacher' needs a teacher checkpoint")
        frames, interior = denoise_frames_teacher(seq, teacher)
    elif mode in ("student", "full"):
        if student is None:
            raise ValueError(f"mode {mode!r} needs a student checkpoint")
        frames, interior = denoise_frames_student(seq, student)
    else:
        frames, interior = denoise_frames_filter(seq, flow_cfg, filt_cfg,
                                                 motion_compensation)
    passthrough = [i for i in range(len(seq)) if i not in set(interior)]
    result = DenoiseResult(frames=frames, interior=interior,
                           passthrough=passthrough, mode=mode)
    if reference is not None:
        if reference.frames.shape != seq.frames.shape:
            raise ValueError("reference sequence shape differs from input")
        result.report = stack_metrics(frames, reference.frames, interior)
        result.report_all = stack_metrics(seq.frames, reference.frames, interior)
    return result
