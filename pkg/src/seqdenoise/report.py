"""Delimited reports, run-report bundles, and the figures rendered next to
them.

All CSVs use fixed float formatting and contain no timestamps, so runs with
identical seeds produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .losses import LossReport
from .metrics import LineProfile, MetricReport


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_metric_csv(path, report: MetricReport, frame_indices: Sequence[int],
                     passthrough: Sequence[int] = ()) -> Path:
    """Per-frame metric table followed by summary rows."""
    rows = []
    for idx, p, s in zip(frame_indices, report.psnr_per_frame, report.ssim_per_frame):
        rows.append([idx, "denoised", p, s, int(idx in set(passthrough))])
    rows.append(["mean", "denoised", report.psnr_mean, report.ssim_mean, ""])
    rows.append(["std", "denoised", report.psnr_std, report.ssim_std, ""])
    return write_csv(path, ["frame", "kind", "psnr_db", "ssim", "passthrough"], rows)


def write_profile_csv(path, profile: LineProfile) -> Path:
    rows = [[i, v] for i, v in enumerate(profile.samples)]
    return write_csv(path, ["sample", "intensity"], rows)


def write_history_csv(path, steps: List[LossReport]) -> Path:
    rows = [[r.epoch, r.step, r.l2_step1, r.l_pre, r.l_recur, r.l_hf, r.l_total]
            for r in steps]
    return write_csv(path, ["epoch", "step", "l2_step1", "l_pre", "l_recur",
                            "l_hf", "l_total"], rows)


def write_ablation_csv(path, records: List[dict]) -> Path:
    header = ["config_id", "num_input_frames", "multiscale", "recurrent_units",
              "motion_compensation", "loss_pre", "loss_recur", "loss_hf",
              "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]
    rows = [[rec[k] for k in header] for rec in records]
    return write_csv(path, header, rows)


PINNED_DECISIONS = {
    "loss_reduction": "mean over batch and pixels",
    "variance_window": "7x7 local population variance, reflect padded",
    "highpass_cutoff_fraction": "0.1 of the spectrum half-diagonal",
    "subband_recombination": "inverse SWT with the approximation band zeroed",
    "gradient_flow": "recursive branch and variance maps are stop-gradient",
    "warping": "backward bilinear, border clamped; +/-2 flows composed from adjacent pairs",
    "recursive_init": "state initialized to the oldest frame (weights sum to 1)",
    "validation_split": "patch-level; validation patches may share frames with training",
    "boundary_frames": "first/last two frames passed through unmodified and flagged",
}


def write_run_report(out_dir, sections: dict) -> Path:
    """Single structured text bundle: configuration, seeds, pinned decisions."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for title, entries in sections.items():
        lines.append(f"[{title}]")
        for key, value in entries.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    lines.append("[pinned_decisions]")
    for key, value in PINNED_DECISIONS.items():
        lines.append(f"{key} = {value}")
    lines.append("")
    path = out_dir / "run_report.txt"
    path.write_text("\n".join(lines))
    return path


def plot_metric_report(path, report: MetricReport, frame_indices: Sequence[int],
                       baseline: Optional[MetricReport] = None) -> Path:
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(frame_indices, report.psnr_per_frame, marker="o", label="denoised")
    axes[1].plot(frame_indices, report.ssim_per_frame, marker="o", label="denoised")
    if baseline is not None:
        axes[0].plot(frame_indices, baseline.psnr_per_frame, marker=".",
                     linestyle="--", label="input")
        axes[1].plot(frame_indices, baseline.ssim_per_frame, marker=".",
                     linestyle="--", label="input")
    axes[0].set_xlabel("frame")
    axes[0].set_ylabel("PSNR [dB]")
    axes[1].set_xlabel("frame")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.grid(alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_profile(path, profiles: dict) -> Path:
    """Overlay one or more named line profiles."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for name, profile in profiles.items():
        ax.plot(np.arange(len(profile.samples)), profile.samples, label=name)
    ax.set_xlabel("position along line [px]")
    ax.set_ylabel("intensity")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(path, steps: List[LossReport]) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    xs = [r.step for r in steps]
    for attr, label in [("l2_step1", "L2"), ("l_pre", "PRE"),
                        ("l_recur", "RECUR"), ("l_hf", "HF"),
                        ("l_total", "total")]:
        ys = [getattr(r, attr) for r in steps]
        if any(y != 0.0 for y in ys):
            ax.plot(xs, ys, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(path, records: List[dict]) -> Path:
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    labels = [rec["config_id"] for rec in records]
    xs = np.arange(len(records))
    axes[0].bar(xs, [rec["psnr_mean"] for rec in records],
                yerr=[rec["psnr_std"] for rec in records], capsize=3)
    axes[0].set_ylabel("PSNR [dB]")
    axes[1].bar(xs, [rec["ssim_mean"] for rec in records],
                yerr=[rec["ssim_std"] for rec in records], capsize=3, color="C1")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.set_xticks(xs)
        ax.set_xticklabels(labels)
        ax.set_xlabel("configuration")
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
