import math

import numpy as np
import pytest

from seqdenoise.metrics import line_profile, psnr, ssim


def test_psnr_identity_is_infinite():
    img = np.random.default_rng(0).random((32, 32))
    assert psnr(img, img) == math.inf


def test_psnr_closed_form_offset():
    img = np.full((64, 64), 0.4)
    shifted = img + 10.0 / 255.0
    expected = 10.0 * math.log10(1.0 / (10.0 / 255.0) ** 2)
    assert psnr(img, shifted) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(28.13, abs=0.01)


def test_psnr_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert psnr(a, b) == psnr(b, a)


def test_ssim_identity_is_one():
    img = np.random.default_rng(2).random((48, 48))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_decreases_with_noise():
    rng = np.random.default_rng(3)
    base = np.full((96, 96), 0.5)
    values = []
    for sigma in (0.01, 0.05, 0.1):
        noisy = base + rng.normal(0.0, sigma, base.shape)
        values.append(ssim(base, noisy))
    assert values[0] < 1.0
    assert values[0] > values[1] > values[2]


def test_ssim_symmetry():
    rng = np.random.default_rng(4)
    a, b = rng.random((32, 32)), rng.random((32, 32))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_line_profile_constant_horizontal():
    img = np.full((20, 30), 0.7)
    prof = line_profile(img, (10, 2), (10, 25))
    assert len(prof.samples) == 24
    assert np.abs(prof.samples - 0.7).max() < 1e-12


def test_line_profile_step_edge():
    img = np.zeros((40, 20))
    img[20:] = 1.0
    prof = line_profile(img, (5, 10), (35, 10))
    assert len(prof.samples) == 31
    assert np.abs(prof.samples[:14]).max() < 1e-12       # rows 5..18
    assert np.abs(prof.samples[-15:] - 1.0).max() < 1e-12  # rows 21..35


def test_line_profile_reversal():
    img = np.random.default_rng(5).random((25, 25))
    fwd = line_profile(img, (3, 4), (19, 20))
    rev = line_profile(img, (19, 20), (3, 4))
    assert np.abs(fwd.samples - rev.samples[::-1]).max() < 1e-12


def test_sample_count_rule():
    img = np.zeros((10, 10))
    prof = line_profile(img, (0, 0), (0, 5.4))   # length 5.4 -> 6 samples
    assert len(prof.samples) == 6
