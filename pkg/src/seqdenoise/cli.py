"""Command-line interface.

Report-producing subcommands write delimited CSV output and render the
matching matplotlib figures next to it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, replace
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .flow import FlowEstimatorConfig, estimate_flow, save_flow_text
from .fusion import fusion_products
from .metrics import line_profile
from .networks import (StudentConfig, StudentNet, TeacherConfig, TeacherNet,
                       load_checkpoint, save_checkpoint)
from .phantom import (DoseLevel, PhantomSpec, apply_dose_noise,
                      generate_clean_sequence)
from .pipeline import denoise as run_denoise
from .pipeline import denoise_frames_student
from .report import (plot_ablation, plot_history, plot_metric_report,
                     plot_profile, write_ablation_csv, write_history_csv,
                     write_metric_csv, write_profile_csv, write_run_report)
from .sequence_io import (load_sequence, make_windows, read_pgm,
                          sample_patches, save_sequence, sequence_stats,
                          split_train_val, write_pgm)
from .temporal import RecursiveFilterConfig
from .training import (ABLATION_TABLE, AblationData, OptimizerConfig,
                       precompute_recursive_targets, run_ablation,
                       train_step1, train_step2)


def _phantom_hash(phantom_dict: dict) -> str:
    return hashlib.sha256(json.dumps(phantom_dict, sort_keys=True).encode()).hexdigest()


def _load_spec_file(path: str):
    with open(path) as f:
        payload = json.load(f)
    phantom_dict = payload.get("phantom", {})
    spec = PhantomSpec(**{k: tuple(v) if isinstance(v, list) else v
                          for k, v in phantom_dict.items()})
    dose_entry = payload.get("dose", "clean")
    if dose_entry == "clean":
        dose = "clean"
    else:
        dose = DoseLevel(**dose_entry)
    return spec, dose, _phantom_hash(phantom_dict)


def _load_sequences(manifests):
    return [load_sequence(m) for m in manifests]


def _gather_patches(manifests, half_width, num_patches, patch, seed):
    windows = []
    for seq in _load_sequences(manifests):
        windows.extend(make_windows(seq, half_width=half_width))
    return sample_patches(windows, num_patches, patch=patch, seed=seed)


@click.group()
@click.version_option(__version__)
def main():
    """Unsupervised two-step denoising for noisy image sequences."""


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="JSON file with 'phantom' fields and a 'dose' entry.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def generate(spec_path, seed, out_dir):
    """Synthesize a phantom sequence and write PGMs plus a manifest."""
    spec, dose, spec_hash = _load_spec_file(spec_path)
    seq = generate_clean_sequence(spec, seed)
    seq.spec_hash = spec_hash
    if dose != "clean":
        seq = apply_dose_noise(seq, dose, seed)
    manifest = save_sequence(seq, out_dir)
    click.echo(f"wrote {len(seq)} frames under {out_dir} (manifest: {manifest})")


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
def inspect(manifest):
    """Print shape, frame count, and intensity statistics of a sequence."""
    seq = load_sequence(manifest)
    stats = sequence_stats(seq)
    dose = "clean" if seq.dose == "clean" else (
        f"P={seq.dose.photons_per_unit_intensity} "
        f"sigma={seq.dose.read_noise_sigma}")
    click.echo(f"frames: {stats['num_frames']}  "
               f"size: {stats['height']}x{stats['width']}  dose: {dose}")
    click.echo(f"intensity min/max: {stats['min']:.4f}/{stats['max']:.4f}  "
               f"mean: {stats['mean']:.4f}  std: {stats['std']:.4f}")


@main.command("flow")
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--mov", "mov_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--pyramid-levels", type=int, default=3, show_default=True)
@click.option("--iterations", type=int, default=4, show_default=True)
@click.option("--smoothing", type=float, default=2.0, show_default=True)
def flow_cmd(ref_path, mov_path, out_path, pyramid_levels, iterations, smoothing):
    """Estimate optical flow between two PGM frames; write a text dump."""
    cfg = FlowEstimatorConfig(pyramid_levels=pyramid_levels,
                              iterations=iterations, smoothing=smoothing)
    field = estimate_flow(read_pgm(ref_path), read_pgm(mov_path), cfg)
    save_flow_text(out_path, field)
    note = " (low confidence)" if field.low_confidence else ""
    click.echo(f"wrote flow {field.shape[0]}x{field.shape[1]} to {out_path}{note}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["teacher", "student", "filter", "full"]),
              default="full", show_default=True)
@click.option("--filter-only", is_flag=True, help="Shortcut for --mode filter.")
@click.option("--teacher", "teacher_path", type=click.Path(exists=True))
@click.option("--student", "student_path", type=click.Path(exists=True))
@click.option("--reference", "reference_path", type=click.Path(exists=True))
@click.option("--no-mc", is_flag=True, help="Disable motion compensation in filter mode.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def denoise(manifest, mode, filter_only, teacher_path, student_path,
            reference_path, no_mc, out_dir):
    """Denoise a sequence; optionally score it against a reference."""
    if filter_only:
        mode = "filter"
    seq = load_sequence(manifest)
    teacher = load_checkpoint(teacher_path, "teacher") if teacher_path else None
    student = load_checkpoint(student_path, "student") if student_path else None
    reference = load_sequence(reference_path) if reference_path else None
    result = run_denoise(seq, mode, teacher=teacher, student=student,
                         reference=reference, motion_compensation=not no_mc)
    out_seq = replace_frames(seq, result.frames)
    save_sequence(out_seq, out_dir)
    click.echo(f"mode={mode}  interior frames: {len(result.interior)}  "
               f"passthrough: {result.passthrough}")
    if result.report is not None:
        out = Path(out_dir)
        write_metric_csv(out / "report.csv", result.report, result.interior)
        plot_metric_report(out / "report.png", result.report, result.interior,
                           baseline=result.report_all)
        click.echo(f"PSNR {result.report.psnr_mean:.2f} dB "
                   f"(input {result.report_all.psnr_mean:.2f} dB)  "
                   f"SSIM {result.report.ssim_mean:.4f}")


def replace_frames(seq, frames):
    from .phantom import FrameSequence
    return FrameSequence(frames=frames, dose=seq.dose, seed=seq.seed,
                         spec_hash=seq.spec_hash)


@main.command("fusion-dump")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--index", type=int, required=True, help="Center frame index.")
@click.option("--teacher", "teacher_path", required=True, type=click.Path(exists=True))
@click.option("--student", "student_path", required=True, type=click.Path(exists=True))
@click.option("--no-mc", is_flag=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def fusion_dump(manifest, index, teacher_path, student_path, no_mc, out_dir):
    """Write every fusion-stage plane of one window as normalized PGMs."""
    from .flow import compensate_window
    from .temporal import recursive_filter

    seq = load_sequence(manifest)
    windows = {w.index: w for w in make_windows(seq)}
    if index not in windows:
        raise click.ClickException(
            f"index {index} lacks full context; valid: {sorted(windows)}")
    window = windows[index]
    student = load_checkpoint(student_path, "student")
    with torch.no_grad():
        x_hat = student(torch.from_numpy(window.center).float()[None, None])[0, 0]
    stack = window.stack if no_mc else compensate_window(window)
    x_hat_r = torch.from_numpy(recursive_filter(stack)).float()
    products = fusion_products(x_hat, x_hat_r, stop_gradient=False)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats_lines = []
    for name, tensor in products.planes():
        plane = tensor.detach().numpy().astype(np.float64)
        lo, hi = float(plane.min()), float(plane.max())
        scale = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
        write_pgm(out / f"{name}.pgm", scale)
        stats_lines.append(f"{name} min {lo:.6g} max {hi:.6g}")
    (out / "planes.txt").write_text("\n".join(stats_lines) + "\n")
    click.echo(f"wrote {len(stats_lines)} planes to {out_dir}")


def _teacher_options(fn):
    fn = click.option("--levels", type=int, default=3, show_default=True)(fn)
    fn = click.option("--base-channels", type=int, default=16, show_default=True)(fn)
    fn = click.option("--recurrence", type=int, default=2, show_default=True)(fn)
    return fn


def _train_options(fn):
    fn = click.option("--epochs", type=int, default=30, show_default=True)(fn)
    fn = click.option("--batch-size", type=int, default=16, show_default=True)(fn)
    fn = click.option("--lr", type=float, default=1e-4, show_default=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--patch", type=int, default=64, show_default=True)(fn)
    fn = click.option("--num-patches", type=int, default=2000, show_default=True)(fn)
    fn = click.option("--val-fraction", type=float, default=0.05, show_default=True)(fn)
    return fn


@main.command("train-step1")
@click.option("--manifest", "manifests", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--frames", type=click.Choice(["3", "5", "7"]), default="5",
              show_default=True)
@click.option("--multiscale", type=click.Choice(["full", "3x3", "off"]),
              default="full", show_default=True)
@click.option("--no-recurrent", is_flag=True)
@_teacher_options
@_train_options
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_step1_cmd(manifests, frames, multiscale, no_recurrent, levels,
                    base_channels, recurrence, epochs, batch_size, lr, seed,
                    patch, num_patches, val_fraction, out_dir):
    """First training step: fit the center-frame predictor."""
    num_frames = int(frames)
    cfg = TeacherConfig(num_context=num_frames - 1, multiscale=multiscale,
                        recurrent=not no_recurrent, levels=levels,
                        base_channels=base_channels, recurrence=recurrence)
    opt = OptimizerConfig(learning_rate=lr, max_epochs=epochs,
                          batch_size=batch_size, seed=seed)
    samples = _gather_patches(manifests, (num_frames - 1) // 2,
                              num_patches, patch, seed)
    train, val = split_train_val(samples, val_fraction, seed)
    torch.manual_seed(seed)
    net = TeacherNet(cfg)
    history = train_step1(train, net, opt, val_samples=val)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out / "teacher.pt")
    write_history_csv(out / "history.csv", history.steps)
    plot_history(out / "history.png", history.steps)
    write_run_report(out, {
        "step1": {"teacher_config": json.dumps(asdict(cfg)),
                  "optimizer": json.dumps(asdict(opt)),
                  "num_patches": len(train), "val_patches": len(val),
                  "manifests": ";".join(manifests)},
    })
    final = history.epochs[-1]
    click.echo(f"final train L2: {final['train_l2']:.6f}  "
               f"val L2: {final.get('val_l2', float('nan')):.6f}")
    click.echo(f"teacher checkpoint: {out / 'teacher.pt'}")


@main.command("train-step2")
@click.option("--manifest", "manifests", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--teacher", "teacher_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_id",
              type=click.Choice(["2", "3", "4", "4-1"]), default="4",
              show_default=True)
@click.option("--levels", type=int, default=3, show_default=True)
@click.option("--base-channels", type=int, default=16, show_default=True)
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--cache/--no-cache", default=False, show_default=True,
              help="Precompute full-frame recursive targets per window.")
@_train_options
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_step2_cmd(manifests, teacher_path, config_id, levels, base_channels,
                    alpha, cache, epochs, batch_size, lr, seed, patch,
                    num_patches, val_fraction, out_dir):
    """Second training step: distill into the single-frame student."""
    ablation = ABLATION_TABLE[config_id]
    teacher = load_checkpoint(teacher_path, "teacher")
    opt = OptimizerConfig(learning_rate=lr, max_epochs=epochs,
                          batch_size=batch_size, seed=seed)
    samples = _gather_patches(manifests, 2, num_patches, patch, seed)
    xr_cache = None
    if cache and ablation.losses & {"recur", "hf"}:
        xr_cache = precompute_recursive_targets(
            samples, ablation.motion_compensation, FlowEstimatorConfig(),
            RecursiveFilterConfig())
    torch.manual_seed(seed)
    student = StudentNet(StudentConfig(levels=levels, base_channels=base_channels))
    history = train_step2(samples, teacher, student, ablation, opt,
                          alpha=alpha, cache=xr_cache)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(student, out / "student.pt")
    write_history_csv(out / "history.csv", history.steps)
    plot_history(out / "history.png", history.steps)
    write_run_report(out, {
        "step2": {"config_id": config_id,
                  "student_config": json.dumps(asdict(student.config)),
                  "optimizer": json.dumps(asdict(opt)), "alpha": alpha,
                  "cache": cache, "manifests": ";".join(manifests)},
    })
    click.echo(f"final total loss: {history.epochs[-1]['train_total']:.6f}")
    click.echo(f"student checkpoint: {out / 'student.pt'}")


@main.command()
@click.option("--configs", default="0,1,2,3,4,4-1", show_default=True,
              help="Comma-separated configuration ids.")
@click.option("--train-sequences", type=int, default=12, show_default=True)
@click.option("--test-sequences", type=int, default=4, show_default=True)
@click.option("--frames", type=int, default=20, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--epochs1", type=int, default=4, show_default=True)
@click.option("--epochs2", type=int, default=4, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--patch", type=int, default=32, show_default=True)
@click.option("--num-patches", type=int, default=1500, show_default=True)
@click.option("--levels", type=int, default=2, show_default=True)
@click.option("--base-channels", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def ablate(configs, train_sequences, test_sequences, frames, height, width,
           epochs1, epochs2, lr, patch, num_patches, levels, base_channels,
           seed, out_dir):
    """Run the ablation grid on self-generated synthetic sequences."""
    from .training import make_synthetic_ablation_data

    grid = [c.strip() for c in configs.split(",") if c.strip()]
    for cid in grid:
        if cid not in ABLATION_TABLE:
            raise click.ClickException(f"unknown configuration {cid!r}")
    data = make_synthetic_ablation_data(
        train_sequences=train_sequences, test_sequences=test_sequences,
        num_frames=frames, height=height, width=width, seed=seed)
    opt1 = OptimizerConfig(learning_rate=lr, max_epochs=epochs1, seed=seed)
    opt2 = OptimizerConfig(learning_rate=lr, max_epochs=epochs2, seed=seed)
    teacher_base = TeacherConfig(levels=levels, base_channels=base_channels)
    student_cfg = StudentConfig(levels=levels, base_channels=base_channels)
    rows = run_ablation(grid, data, opt1, opt2, teacher_base=teacher_base,
                        student_cfg=student_cfg, patch=patch,
                        num_patches=num_patches, use_cache=True,
                        progress=lambda msg: click.echo(f"  {msg}"))
    records = [row.as_record() for row in rows]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out / "ablation.csv", records)
    plot_ablation(out / "ablation.png", records)
    write_run_report(out, {
        "ablation": {"grid": ",".join(grid), "seed": seed,
                     "train_sequences": train_sequences,
                     "test_sequences": test_sequences, "frames": frames,
                     "size": f"{height}x{width}", "patch": patch,
                     "num_patches": num_patches,
                     "teacher_base": json.dumps(asdict(teacher_base)),
                     "student": json.dumps(asdict(student_cfg)),
                     "epochs": f"{epochs1}/{epochs2}", "lr": lr},
    })
    for rec in records:
        click.echo(f"({rec['config_id']})  PSNR {rec['psnr_mean']:.2f} dB  "
                   f"SSIM {rec['ssim_mean']:.4f}")
    click.echo(f"table: {out / 'ablation.csv'}")


@main.command()
@click.option("--denoised", "denoised_path", required=True,
              type=click.Path(exists=True))
@click.option("--reference", "reference_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def evaluate(denoised_path, reference_path, out_path):
    """PSNR/SSIM of a denoised sequence against a reference sequence."""
    from .pipeline import stack_metrics

    denoised = load_sequence(denoised_path)
    reference = load_sequence(reference_path)
    if denoised.frames.shape != reference.frames.shape:
        raise click.ClickException("sequence shapes differ")
    indices = list(range(len(denoised)))
    report = stack_metrics(denoised.frames, reference.frames, indices)
    out_path = Path(out_path)
    write_metric_csv(out_path, report, indices)
    plot_metric_report(out_path.with_suffix(".png"), report, indices)
    click.echo(f"PSNR {report.psnr_mean:.2f} +/- {report.psnr_std:.2f} dB  "
               f"SSIM {report.ssim_mean:.4f} +/- {report.ssim_std:.4f}")


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--from", "p0", required=True, help="Start 'row,col'.")
@click.option("--to", "p1", required=True, help="End 'row,col'.")
@click.option("--out", "out_path", required=True, type=click.Path())
def profile(image_path, p0, p1, out_path):
    """Sample intensities along a line segment; write CSV plus a figure."""
    def parse(text):
        r, c = text.split(",")
        return float(r), float(c)

    image = read_pgm(image_path)
    prof = line_profile(image, parse(p0), parse(p1))
    out_path = Path(out_path)
    write_profile_csv(out_path, prof)
    plot_profile(out_path.with_suffix(".png"), {Path(image_path).stem: prof})
    click.echo(f"{len(prof.samples)} samples -> {out_path}")


if __name__ == "__main__":
    main()
