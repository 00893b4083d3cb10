"""Two-step training orchestration and the ablation grid.

Step 1 trains the center-frame predictor on context windows with an L2 loss.
Step 2 freezes it as a teacher and trains the single-frame student against a
combination of distillation, recursive-filter consistency, and high-frequency
fusion losses, selected per ablation configuration.

Flow estimation and recursive filtering are recomputed per batch by default;
an optional cache precomputes the filter target once per source window at
full frame size and crops it per patch (enable for long runs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import pipeline
from .flow import FlowEstimatorConfig, compensate_window
from .fusion import HighpassConfig, fusion_products
from .losses import LossReport, loss_hf, loss_pre, loss_recur, loss_step1
from .metrics import MetricReport
from .networks import StudentConfig, StudentNet, TeacherConfig, TeacherNet
from .phantom import (LOW_DOSE, FrameSequence, PhantomSpec, apply_dose_noise,
                      generate_clean_sequence)
from .sequence_io import PatchSample, make_windows, sample_patches
from .temporal import RecursiveFilterConfig, recursive_filter


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the offending epoch/step."""


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 1e-4
    max_epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.method != "adam":
            raise ValueError(f"unsupported optimizer {self.method!r}")


@dataclass(frozen=True)
class AblationConfig:
    """One row of the component-contribution grid."""

    config_id: str
    num_input_frames: int = 5
    multiscale: str = "full"          # "full" | "3x3" | "off"
    recurrent_units: bool = True
    motion_compensation: bool = False
    losses: frozenset = frozenset()   # subset of {"pre", "recur", "hf"}

    @property
    def is_raw(self) -> bool:
        return not self.losses and self.config_id == "0"

    @property
    def trains_student(self) -> bool:
        return bool(self.losses)

    @property
    def half_width(self) -> int:
        return (self.num_input_frames - 1) // 2

    def teacher_arch(self, base: TeacherConfig) -> TeacherConfig:
        return replace(base, num_context=self.num_input_frames - 1,
                       multiscale=self.multiscale, recurrent=self.recurrent_units)


ABLATION_TABLE: Dict[str, AblationConfig] = {
    "0": AblationConfig("0"),
    "1": AblationConfig("1"),
    "1-1": AblationConfig("1-1", num_input_frames=3),
    "1-2": AblationConfig("1-2", num_input_frames=7),
    "1-3": AblationConfig("1-3", multiscale="off"),
    "1-4": AblationConfig("1-4", multiscale="3x3"),
    "1-5": AblationConfig("1-5", recurrent_units=False),
    "2": AblationConfig("2", losses=frozenset({"pre"})),
    "3": AblationConfig("3", motion_compensation=True,
                        losses=frozenset({"pre", "recur"})),
    "4": AblationConfig("4", motion_compensation=True,
                        losses=frozenset({"pre", "recur", "hf"})),
    "4-1": AblationConfig("4-1", motion_compensation=False,
                          losses=frozenset({"pre", "recur", "hf"})),
}


@dataclass
class TrainHistory:
    steps: List[LossReport] = field(default_factory=list)
    epochs: List[dict] = field(default_factory=list)


def _batch_tensors(samples: Sequence[PatchSample]) -> Tuple[torch.Tensor, torch.Tensor]:
    context = np.stack([np.stack(s.window.context) for s in samples])
    center = np.stack([s.window.center for s in samples])[:, None]
    return (torch.from_numpy(context).float(), torch.from_numpy(center).float())


def _check_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"{what} became {value} at epoch {epoch}, step {step}")


def train_step1(samples: Sequence[PatchSample], net: TeacherNet,
                opt: OptimizerConfig,
                val_samples: Optional[Sequence[PatchSample]] = None) -> TrainHistory:
    """Train the center-frame predictor; deterministic under opt.seed."""
    rng = np.random.default_rng(opt.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=opt.learning_rate)
    history = TrainHistory()
    step = 0
    net.train()
    for epoch in range(opt.max_epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(samples), opt.batch_size):
            batch = [samples[i] for i in order[start:start + opt.batch_size]]
            context, center = _batch_tensors(batch)
            loss = loss_step1(net(context), center)
            value = float(loss.detach())
            _check_finite(value, "step-1 loss", epoch, step)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            history.steps.append(LossReport(epoch=epoch, step=step, l2_step1=value))
            epoch_losses.append(value)
            step += 1
        row = {"epoch": epoch, "train_l2": float(np.mean(epoch_losses))}
        if val_samples:
            row["val_l2"] = validate_step1(net, val_samples, opt.batch_size)
        history.epochs.append(row)
    net.eval()
    return history


def validate_step1(net: TeacherNet, samples: Sequence[PatchSample],
                   batch_size: int = 16) -> float:
    net.eval()
    losses = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start:start + batch_size]
            context, center = _batch_tensors(batch)
            losses.append(float(loss_step1(net(context), center)))
    net.train()
    return float(np.mean(losses))


def make_recursive_target(sample: PatchSample, mc: bool,
                          flow_cfg: FlowEstimatorConfig,
                          filt_cfg: RecursiveFilterConfig,
                          cache: Optional[dict] = None) -> np.ndarray:
    """Recursive-filter target for one sample, optionally from a full-frame
    cache keyed by the sample's source window."""
    if cache is not None and sample.source is not None and id(sample.source) in cache:
        full = cache[id(sample.source)]
        r, c = sample.offset
        p = sample.window.center.shape[0]
        return full[r:r + p, c:c + p]
    stack = (compensate_window(sample.window, flow_cfg) if mc
             else sample.window.stack)
    return recursive_filter(stack, filt_cfg)


def precompute_recursive_targets(samples: Sequence[PatchSample], mc: bool,
                                 flow_cfg: FlowEstimatorConfig,
                                 filt_cfg: RecursiveFilterConfig) -> dict:
    """Full-frame recursive targets for every distinct source window."""
    cache: dict = {}
    for sample in samples:
        window = sample.source
        if window is None or id(window) in cache:
            continue
        stack = compensate_window(window, flow_cfg) if mc else window.stack
        cache[id(window)] = recursive_filter(stack, filt_cfg)
    return cache


def train_step2(samples: Sequence[PatchSample], teacher: TeacherNet,
                student: StudentNet, ablation: AblationConfig,
                opt: OptimizerConfig,
                flow_cfg: FlowEstimatorConfig = FlowEstimatorConfig(),
                filt_cfg: RecursiveFilterConfig = RecursiveFilterConfig(),
                var_window: int = 7,
                highpass: HighpassConfig = HighpassConfig(),
                alpha: float = 1.0,
                cache: Optional[dict] = None) -> TrainHistory:
    """Train the student against the frozen teacher per the ablation row."""
    if not ablation.trains_student:
        raise ValueError(f"configuration {ablation.config_id!r} has no step-2 losses")
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)

    needs_xr = bool(ablation.losses & {"recur", "hf"})
    rng = np.random.default_rng(opt.seed)
    optimizer = torch.optim.Adam(student.parameters(), lr=opt.learning_rate)
    history = TrainHistory()
    step = 0
    student.train()
    for epoch in range(opt.max_epochs):
        order = rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(samples), opt.batch_size):
            batch = [samples[i] for i in order[start:start + opt.batch_size]]
            context, center = _batch_tensors(batch)
            with torch.no_grad():
                teacher_out = teacher(context)
            x_hat = student(center)

            parts = {"l_pre": 0.0, "l_recur": 0.0, "l_hf": 0.0}
            total = x_hat.sum() * 0.0
            if "pre" in ablation.losses:
                lp = loss_pre(x_hat, teacher_out)
                parts["l_pre"] = float(lp.detach())
                total = total + lp
            if needs_xr:
                xr_np = np.stack([
                    make_recursive_target(s, ablation.motion_compensation,
                                          flow_cfg, filt_cfg, cache)
                    for s in batch])[:, None]
                x_hat_r = torch.from_numpy(xr_np).float()
                if "recur" in ablation.losses:
                    lr_ = loss_recur(x_hat, x_hat_r)
                    parts["l_recur"] = float(lr_.detach())
                    total = total + alpha * lr_
                if "hf" in ablation.losses:
                    products = fusion_products(x_hat, x_hat_r, window=var_window,
                                               highpass=highpass)
                    lh = loss_hf(products.x_hf, products.xr_hf)
                    parts["l_hf"] = float(lh.detach())
                    total = total + lh

            l_total = parts["l_pre"] + alpha * parts["l_recur"] + parts["l_hf"]
            _check_finite(l_total, "step-2 loss", epoch, step)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            history.steps.append(LossReport(epoch=epoch, step=step,
                                            l_pre=parts["l_pre"],
                                            l_recur=parts["l_recur"],
                                            l_hf=parts["l_hf"], l_total=l_total))
            epoch_losses.append(l_total)
            step += 1
        history.epochs.append({"epoch": epoch,
                               "train_total": float(np.mean(epoch_losses))})
    student.eval()
    return history


@dataclass
class AblationData:
    """Sequences for one ablation run: noisy training inputs plus a held-out
    noisy/reference test pair (the reference never enters a loss)."""

    train_noisy: List[FrameSequence]
    test_noisy: List[FrameSequence]
    test_reference: List[FrameSequence]


def make_synthetic_ablation_data(train_sequences: int = 12,
                                 test_sequences: int = 4,
                                 num_frames: int = 20, height: int = 64,
                                 width: int = 64, seed: int = 0,
                                 dose=LOW_DOSE) -> AblationData:
    """Deterministic phantom dataset: disjoint train/test seeds, clean test
    references with identical signal content to the noisy test inputs."""
    spec = PhantomSpec(height=height, width=width, num_frames=num_frames,
                       lesion_radii=(0.11 * min(height, width),
                                     0.06 * min(height, width)),
                       needle_length=0.38 * min(height, width),
                       needle_width=2.0,
                       motion_amplitude=0.09 * min(height, width),
                       motion_period=float(num_frames))
    train, test_noisy, test_ref = [], [], []
    for k in range(train_sequences):
        clean = generate_clean_sequence(spec, seed + k)
        train.append(apply_dose_noise(clean, dose, seed + k))
    for k in range(test_sequences):
        s = seed + 10_000 + k
        clean = generate_clean_sequence(spec, s)
        test_ref.append(clean)
        test_noisy.append(apply_dose_noise(clean, dose, s))
    return AblationData(train_noisy=train, test_noisy=test_noisy,
                        test_reference=test_ref)


@dataclass
class AblationRow:
    config: AblationConfig
    report: MetricReport

    def as_record(self) -> dict:
        cfg = self.config
        return {
            "config_id": cfg.config_id,
            "num_input_frames": cfg.num_input_frames,
            "multiscale": cfg.multiscale,
            "recurrent_units": int(cfg.recurrent_units),
            "motion_compensation": int(cfg.motion_compensation),
            "loss_pre": int("pre" in cfg.losses),
            "loss_recur": int("recur" in cfg.losses),
            "loss_hf": int("hf" in cfg.losses),
            "psnr_mean": self.report.psnr_mean,
            "psnr_std": self.report.psnr_std,
            "ssim_mean": self.report.ssim_mean,
            "ssim_std": self.report.ssim_std,
        }


def _patch_samples_for(sequences: Iterable[FrameSequence], half_width: int,
                       count: int, patch: int, seed: int) -> List[PatchSample]:
    windows = []
    for seq in sequences:
        windows.extend(make_windows(seq, half_width=half_width))
    return sample_patches(windows, count, patch=patch, seed=seed)


def _evaluate_raw(data: AblationData) -> MetricReport:
    merged = MetricReport()
    for noisy, ref in zip(data.test_noisy, data.test_reference):
        interior = range(2, len(noisy) - 2)
        rep = pipeline.stack_metrics(noisy.frames, ref.frames, interior)
        merged.psnr_per_frame.extend(rep.psnr_per_frame)
        merged.ssim_per_frame.extend(rep.ssim_per_frame)
    return merged


def _evaluate_net(data: AblationData, net, is_teacher: bool,
                  half_width: int) -> MetricReport:
    merged = MetricReport()
    for noisy, ref in zip(data.test_noisy, data.test_reference):
        if is_teacher:
            out, interior = pipeline.denoise_frames_teacher(noisy, net,
                                                            half_width=half_width)
        else:
            out, interior = pipeline.denoise_frames_student(noisy, net)
        rep = pipeline.stack_metrics(out, ref.frames, interior)
        merged.psnr_per_frame.extend(rep.psnr_per_frame)
        merged.ssim_per_frame.extend(rep.ssim_per_frame)
    return merged


def run_ablation(grid: Sequence[str], data: AblationData,
                 opt_step1: OptimizerConfig, opt_step2: OptimizerConfig,
                 teacher_base: TeacherConfig = TeacherConfig(),
                 student_cfg: StudentConfig = StudentConfig(),
                 patch: int = 64, num_patches: int = 2000,
                 flow_cfg: FlowEstimatorConfig = FlowEstimatorConfig(),
                 filt_cfg: RecursiveFilterConfig = RecursiveFilterConfig(),
                 use_cache: bool = True,
                 progress=None) -> List[AblationRow]:
    """Run the requested grid rows and evaluate each on the held-out split.

    Step-2 rows share one baseline teacher; recursive targets are cached per
    source window when ``use_cache`` is set.
    """
    rows: List[AblationRow] = []
    teachers: Dict[TeacherConfig, TeacherNet] = {}
    xr_caches: Dict[bool, dict] = {}
    step2_samples: Optional[List[PatchSample]] = None

    def note(msg: str) -> None:
        if progress:
            progress(msg)

    def get_teacher(arch: TeacherConfig, half_width: int) -> TeacherNet:
        if arch not in teachers:
            note(f"training teacher {arch.multiscale}/{arch.num_context}ctx"
                 f"/recurrent={arch.recurrent}")
            torch.manual_seed(opt_step1.seed)
            net = TeacherNet(arch)
            samples = _patch_samples_for(data.train_noisy, half_width,
                                         num_patches, patch, opt_step1.seed)
            train_step1(samples, net, opt_step1)
            teachers[arch] = net
        return teachers[arch]

    for cid in grid:
        if cid not in ABLATION_TABLE:
            raise KeyError(f"unknown ablation configuration {cid!r}")
        cfg = ABLATION_TABLE[cid]
        note(f"configuration ({cid})")
        if cfg.is_raw:
            report = _evaluate_raw(data)
        elif not cfg.trains_student:
            teacher = get_teacher(cfg.teacher_arch(teacher_base), cfg.half_width)
            report = _evaluate_net(data, teacher, True, cfg.half_width)
        else:
            teacher = get_teacher(replace(teacher_base), 2)
            if step2_samples is None:
                step2_samples = _patch_samples_for(data.train_noisy, 2,
                                                   num_patches, patch,
                                                   opt_step2.seed + 1)
            cache = None
            if use_cache and cfg.losses & {"recur", "hf"}:
                key = cfg.motion_compensation
                if key not in xr_caches:
                    note(f"precomputing recursive targets (mc={key})")
                    xr_caches[key] = precompute_recursive_targets(
                        step2_samples, key, flow_cfg, filt_cfg)
                cache = xr_caches[key]
            torch.manual_seed(opt_step2.seed)
            student = StudentNet(student_cfg)
            train_step2(step2_samples, teacher, student, cfg, opt_step2,
                        flow_cfg=flow_cfg, filt_cfg=filt_cfg, cache=cache)
            report = _evaluate_net(data, student, False, 2)
        rows.append(AblationRow(config=cfg, report=report))
    return rows
