"""Training losses for both steps.

Every loss is a mean over batch and pixels (the mean decouples the learning
rate from batch and patch size).  The recursive-filter target and the teacher
output are constants with respect to the student parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import torch
import torch.nn.functional as F


@dataclass
class LossReport:
    epoch: int = 0
    step: int = 0
    l2_step1: float = 0.0
    l_pre: float = 0.0
    l_recur: float = 0.0
    l_hf: float = 0.0
    l_total: float = 0.0
    extra: Dict[str, float] = field(default_factory=dict)


def loss_step1(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error of the center-frame prediction."""
    return F.mse_loss(prediction, target)


def loss_pre(x_hat: torch.Tensor, teacher_out: torch.Tensor) -> torch.Tensor:
    """Distillation loss against the frozen teacher's output."""
    return F.mse_loss(x_hat, teacher_out.detach())


def loss_recur(x_hat: torch.Tensor, x_hat_r: torch.Tensor) -> torch.Tensor:
    """Consistency with the recursive-filter branch; the target is constant."""
    return F.mse_loss(x_hat, x_hat_r.detach())


def loss_hf(x_hf: torch.Tensor, xr_hf: torch.Tensor) -> torch.Tensor:
    """Mean squared difference of the two fusion-weighted high-frequency
    components."""
    return F.mse_loss(x_hf, xr_hf)


def loss_total(l_pre: torch.Tensor, l_recur: torch.Tensor, l_hf: torch.Tensor,
               alpha: float = 1.0) -> torch.Tensor:
    return l_pre + alpha * l_recur + l_hf
