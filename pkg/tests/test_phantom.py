import math

import numpy as np
import pytest

from seqdenoise.flow import FlowField
from seqdenoise.phantom import (DoseLevel, FrameSequence, PhantomConfigError,
                                PhantomSpec, apply_dose_noise,
                                clean_discrepancy, generate_clean_sequence,
                                lesion_centers, object_offset)


def test_static_spec_gives_identical_frames():
    spec = PhantomSpec(motion_amplitude=0.0)
    seq = generate_clean_sequence(spec, seed=3)
    for frame in seq.frames[1:]:
        assert np.array_equal(frame, seq.frames[0])


def test_half_period_separation_matches_analytic_path():
    # Circular path: poses half a period apart sit exactly 2*amplitude apart.
    spec = PhantomSpec(height=128, width=128, motion_amplitude=8.0,
                       motion_period=20.0, num_frames=20)
    for f in (0, 3, 7):
        dy0, dx0 = object_offset(spec, f)
        dy1, dx1 = object_offset(spec, f + spec.motion_period / 2)
        assert math.hypot(dy1 - dy0, dx1 - dx0) == pytest.approx(16.0, abs=1e-9)

    # The rendered lesion actually follows the path: centroid displacement of
    # the largest lesion between the two frames matches the analytic value.
    seq = generate_clean_sequence(spec, seed=0)
    bare = generate_clean_sequence(
        PhantomSpec(height=128, width=128, motion_amplitude=0.0,
                    num_frames=20, lesion_radii=(), needle_length=0.0), seed=0)

    def centroid(frame, base_center, radius):
        diff = frame - bare.frames[0]       # bright lesions only are positive
        yy, xx = np.mgrid[0:frame.shape[0], 0:frame.shape[1]]
        sel = (diff > 0.05) & (np.hypot(yy - base_center[0],
                                        xx - base_center[1]) < radius + 12)
        w = diff[sel]
        return (yy[sel] * w).sum() / w.sum(), (xx[sel] * w).sum() / w.sum()

    base = lesion_centers(spec)[0]
    c0 = centroid(seq.frames[0], base, spec.lesion_radii[0])
    c10 = centroid(seq.frames[10], base, spec.lesion_radii[0])
    assert math.hypot(c10[0] - c0[0], c10[1] - c0[1]) == pytest.approx(16.0, abs=0.5)


def test_generation_is_deterministic():
    spec = PhantomSpec()
    a = generate_clean_sequence(spec, seed=11)
    b = generate_clean_sequence(spec, seed=11)
    assert np.array_equal(a.frames, b.frames)


def test_geometry_exceeding_frame_raises():
    with pytest.raises(PhantomConfigError):
        PhantomSpec(height=48, width=48, lesion_radii=(30.0,))
    with pytest.raises(PhantomConfigError):
        PhantomSpec(height=64, width=64, motion_amplitude=40.0)


def test_noise_on_zero_image_is_zero():
    zeros = FrameSequence(frames=np.zeros((5, 16, 16)), dose="clean", seed=0)
    noisy = apply_dose_noise(zeros, DoseLevel(1000.0, 0.0), seed=1)
    assert np.array_equal(noisy.frames, zeros.frames)


def test_poisson_variance_oracle():
    # Constant 0.5 at P=1000: per-pixel variance 0.5/1000 within 10%.
    const = FrameSequence(frames=np.full((16, 256, 256), 0.5), dose="clean", seed=0)
    noisy = apply_dose_noise(const, DoseLevel(1000.0, 0.0), seed=4)
    residual = noisy.frames - 0.5
    assert residual.size >= 1_000_000
    var = residual.var()
    assert var == pytest.approx(5e-4, rel=0.10)


def test_noise_variance_includes_read_noise():
    sigma = 0.01
    const = FrameSequence(frames=np.full((16, 256, 256), 0.5), dose="clean", seed=0)
    noisy = apply_dose_noise(const, DoseLevel(1000.0, sigma), seed=4)
    expected = 0.5 / 1000.0 + sigma ** 2
    assert (noisy.frames - 0.5).var() == pytest.approx(expected, rel=0.10)


def test_noise_seeds_are_independent():
    const = FrameSequence(frames=np.full((16, 256, 256), 0.5), dose="clean", seed=0)
    a = apply_dose_noise(const, DoseLevel(1000.0, 0.0), seed=1).frames - 0.5
    b = apply_dose_noise(const, DoseLevel(1000.0, 0.0), seed=2).frames - 0.5
    rho = np.corrcoef(a.ravel(), b.ravel())[0, 1]
    assert abs(rho) < 0.01


def test_noise_requires_clean_input():
    spec = PhantomSpec()
    noisy = apply_dose_noise(generate_clean_sequence(spec, 0), DoseLevel(500.0), 0)
    with pytest.raises(ValueError):
        apply_dose_noise(noisy, DoseLevel(500.0), 1)


def test_clean_discrepancy_trivial_cases():
    seq = generate_clean_sequence(PhantomSpec(), seed=0)
    assert clean_discrepancy(seq, 3, 3) == 0.0
    static = generate_clean_sequence(PhantomSpec(motion_amplitude=0.0), seed=0)
    assert clean_discrepancy(static, 0, 4) == 0.0


def test_clean_discrepancy_ground_truth_shift_flow():
    # Flat background; frames a quarter period apart differ by an exactly
    # integer object shift, so the true flow removes >= 90% of the delta.
    spec = PhantomSpec(height=96, width=96, motion_amplitude=8.0,
                       motion_period=20.0, background_texture_scale=0.0)
    seq = generate_clean_sequence(spec, seed=1)
    i, j = 0, 5
    dy = object_offset(spec, j)[0] - object_offset(spec, i)[0]
    dx = object_offset(spec, j)[1] - object_offset(spec, i)[1]
    assert dy == pytest.approx(round(dy), abs=1e-9)
    assert dx == pytest.approx(round(dx), abs=1e-9)
    h, w = seq.frame_shape
    flow = FlowField(u=np.full((h, w), dx), v=np.full((h, w), dy))
    before = clean_discrepancy(seq, i, j, border=10)
    after = clean_discrepancy(seq, i, j, flow=flow, border=10)
    assert after <= 0.1 * before


def test_delta_monotonicity_under_true_flow():
    # For every adjacent pair, warping by the analytic object motion never
    # increases the mean discrepancy.
    spec = PhantomSpec(motion_amplitude=5.0, background_texture_scale=0.0)
    seq = generate_clean_sequence(spec, seed=2)
    h, w = seq.frame_shape
    for i in range(len(seq) - 1):
        j = i + 1
        dy = object_offset(spec, j)[0] - object_offset(spec, i)[0]
        dx = object_offset(spec, j)[1] - object_offset(spec, i)[1]
        flow = FlowField(u=np.full((h, w), dx), v=np.full((h, w), dy))
        warped = clean_discrepancy(seq, i, j, flow=flow, border=8)
        unwarped = clean_discrepancy(seq, i, j, border=8)
        assert warped <= unwarped


def test_noise_determinism():
    spec = PhantomSpec()
    clean = generate_clean_sequence(spec, seed=9)
    a = apply_dose_noise(clean, DoseLevel(500.0, 0.002), seed=5)
    b = apply_dose_noise(clean, DoseLevel(500.0, 0.002), seed=5)
    assert np.array_equal(a.frames, b.frames)
