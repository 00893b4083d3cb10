"""Edge-preserving fusion math for the second training step.

Combines the two denoising branches (network output and recursive-filter
output) through an optimal average, absolute-difference maps, local-variance
cross-fusion matrices, and high-frequency images extracted by a level-1
undecimated Haar transform whose detail subbands are cleaned by an FFT
high-pass before recombination.

All operations act on torch tensors shaped (..., H, W), preserve dtype, and
are differentiable.  By default the recursive-branch input and the variance
maps are treated as constants (stop-gradient): gradients reach the learnable
branch only through its own image and its high-frequency extraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class HighpassConfig:
    """Radius of the excluded low-frequency disc, as a fraction of the
    half-diagonal of the centered spectrum."""

    cutoff_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.cutoff_fraction < 1.0:
            raise ValueError("cutoff_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SWTBands:
    """Full-resolution level-1 Haar subbands.

    Naming: first letter is the filter along columns (x), second along rows
    (y).  HL therefore carries vertical-edge detail (high-pass across
    columns), LH horizontal-edge detail.
    """

    ll: torch.Tensor
    lh: torch.Tensor
    hl: torch.Tensor
    hh: torch.Tensor


def optimal_average(x_hat: torch.Tensor, x_hat_r: torch.Tensor) -> torch.Tensor:
    if x_hat.shape != x_hat_r.shape:
        raise ValueError("branch outputs have mismatched shapes")
    return (x_hat + x_hat_r) * 0.5


def difference_maps(t_hat: torch.Tensor, x_hat: torch.Tensor,
                    x_hat_r: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    return torch.abs(t_hat - x_hat), torch.abs(t_hat - x_hat_r)


def local_variance(image: torch.Tensor, window: int = 7) -> torch.Tensor:
    """Per-pixel population variance over a window x window neighborhood,
    reflect-padded at the borders."""
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    shape = image.shape
    # Variance is shift-invariant; centering on the global mean avoids the
    # catastrophic cancellation of E[x^2] - E[x]^2 at low precision.
    x = image - image.detach().mean()
    x = x.reshape(-1, 1, shape[-2], shape[-1])
    pad = window // 2
    xp = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    mean = F.avg_pool2d(xp, window, stride=1)
    mean_sq = F.avg_pool2d(xp * xp, window, stride=1)
    var = (mean_sq - mean * mean).clamp_min(0.0)
    return var.reshape(shape)


def cross_fusion(dx: torch.Tensor, dxr: torch.Tensor, x_hat: torch.Tensor,
                 x_hat_r: torch.Tensor, window: int = 7
                 ) -> Tuple[torch.Tensor, torch.Tensor]:
    """Fusion matrices: each branch's difference variance scales the partner
    branch's image, element-wise."""
    m_dx_xr = local_variance(dx, window) * x_hat_r
    m_dxr_x = local_variance(dxr, window) * x_hat
    return m_dx_xr, m_dxr_x


def _haar_pair(x: torch.Tensor, dim: int) -> Tuple[torch.Tensor, torch.Tensor]:
    shifted = torch.roll(x, shifts=-1, dims=dim)
    return (x + shifted) * 0.5, (x - shifted) * 0.5


def _haar_merge(low: torch.Tensor, high: torch.Tensor, dim: int) -> torch.Tensor:
    # Adjoint of the analysis pair; exact inverse since analysis is isometric.
    return (low + high + torch.roll(low, 1, dim) - torch.roll(high, 1, dim)) * 0.5


def swt_haar1(image: torch.Tensor) -> SWTBands:
    """Undecimated single-level Haar analysis with periodic boundaries."""
    lx, hx = _haar_pair(image, dim=-1)
    ll, lh = _haar_pair(lx, dim=-2)
    hl, hh = _haar_pair(hx, dim=-2)
    return SWTBands(ll=ll, lh=lh, hl=hl, hh=hh)


def iswt_haar1(bands: SWTBands) -> torch.Tensor:
    """Synthesis via the analysis adjoint; iswt(swt(f)) == f to rounding."""
    lx = _haar_merge(bands.ll, bands.lh, dim=-2)
    hx = _haar_merge(bands.hl, bands.hh, dim=-2)
    return _haar_merge(lx, hx, dim=-1)


def fft_highpass(image: torch.Tensor,
                 cfg: HighpassConfig = HighpassConfig()) -> torch.Tensor:
    """Zero every Fourier coefficient whose centered radial frequency is below
    cutoff_fraction of the half-diagonal, then invert and take the real part."""
    h, w = image.shape[-2], image.shape[-1]
    fy = torch.fft.fftfreq(h, d=1.0 / h, device=image.device)
    fx = torch.fft.fftfreq(w, d=1.0 / w, device=image.device)
    radius = torch.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    r_max = ((h / 2.0) ** 2 + (w / 2.0) ** 2) ** 0.5
    keep = (radius >= cfg.cutoff_fraction * r_max)
    spectrum = torch.fft.fft2(image) * keep
    return torch.fft.ifft2(spectrum).real.to(image.dtype)


def hf_extract(image: torch.Tensor,
               cfg: HighpassConfig = HighpassConfig()) -> torch.Tensor:
    """High-frequency image: Haar detail subbands, FFT-high-passed, recombined
    with the approximation subband zeroed."""
    bands = swt_haar1(image)
    cleaned = SWTBands(ll=torch.zeros_like(bands.ll),
                       lh=fft_highpass(bands.lh, cfg),
                       hl=fft_highpass(bands.hl, cfg),
                       hh=fft_highpass(bands.hh, cfg))
    return iswt_haar1(cleaned)


@dataclass
class FusionProducts:
    """Every intermediate of the fusion stage, all image-shaped."""

    x_hat: torch.Tensor
    x_hat_r: torch.Tensor
    t_hat: torch.Tensor
    dx: torch.Tensor
    dxr: torch.Tensor
    m_dx_xr: torch.Tensor
    m_dxr_x: torch.Tensor
    h_x: torch.Tensor
    h_xr: torch.Tensor
    x_hf: torch.Tensor
    xr_hf: torch.Tensor

    def planes(self):
        """(name, tensor) pairs in pipeline order, for diagnostic dumps."""
        return [("x_hat", self.x_hat), ("x_hat_r", self.x_hat_r),
                ("t_hat", self.t_hat), ("dx", self.dx), ("dxr", self.dxr),
                ("m_dx_xr", self.m_dx_xr), ("m_dxr_x", self.m_dxr_x),
                ("h_x", self.h_x), ("h_xr", self.h_xr),
                ("x_hf", self.x_hf), ("xr_hf", self.xr_hf)]


def fusion_products(x_hat: torch.Tensor, x_hat_r: torch.Tensor,
                    window: int = 7,
                    highpass: HighpassConfig = HighpassConfig(),
                    stop_gradient: bool = True) -> FusionProducts:
    """Compute the full fusion stage from the two branch outputs.

    With ``stop_gradient`` (the default used during training), the recursive
    branch and both variance maps are detached; gradients propagate through
    the extraction H(x_hat) of the learnable branch and through the bare
    x_hat factor of the partner fusion matrix.
    """
    if stop_gradient:
        x_hat_r = x_hat_r.detach()
    t_hat = optimal_average(x_hat, x_hat_r)
    dx, dxr = difference_maps(t_hat, x_hat, x_hat_r)
    var_dx = local_variance(dx, window)
    var_dxr = local_variance(dxr, window)
    if stop_gradient:
        var_dx = var_dx.detach()
        var_dxr = var_dxr.detach()
    m_dx_xr = var_dx * x_hat_r
    m_dxr_x = var_dxr * x_hat
    h_x = hf_extract(x_hat, highpass)
    h_xr = hf_extract(x_hat_r, highpass)
    x_hf = m_dx_xr * h_x
    xr_hf = m_dxr_x * h_xr
    return FusionProducts(x_hat=x_hat, x_hat_r=x_hat_r, t_hat=t_hat,
                          dx=dx, dxr=dxr, m_dx_xr=m_dx_xr, m_dxr_x=m_dxr_x,
                          h_x=h_x, h_xr=h_xr, x_hf=x_hf, xr_hf=xr_hf)


def hf_components(products: FusionProducts) -> Tuple[torch.Tensor, torch.Tensor]:
    return products.x_hf, products.xr_hf
