"""Network building blocks and the two architectures.

The teacher predicts the center frame from its four context frames through a
multi-scale front end (3x3/5x5/7x7 convolutions, 32 filters each, shared
across frames) feeding an encoder/decoder with recurrent residual units and
attention-gated skip connections.  The student is a plain single-frame U-Net.

Desk-scale defaults (levels=3, base_channels=16, recurrence t=2) keep the
topology while running on CPU in minutes.  Convolutions use reflect padding
so spatial size is preserved; no normalization layers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F


class CheckpointError(RuntimeError):
    """Checkpoint file rejected: wrong kind or architecture hash mismatch."""


def conv_same(in_ch: int, out_ch: int, kernel: int) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2,
                     padding_mode="reflect")


@dataclass(frozen=True)
class TeacherConfig:
    num_context: int = 4
    multiscale: str = "full"      # "full" (3x3/5x5/7x7) | "3x3" | "off"
    recurrent: bool = True
    levels: int = 3
    base_channels: int = 16
    recurrence: int = 2

    def __post_init__(self):
        if self.multiscale not in ("full", "3x3", "off"):
            raise ValueError(f"unknown multiscale mode {self.multiscale!r}")
        if self.levels < 2 or self.base_channels < 1 or self.recurrence < 1:
            raise ValueError("levels >= 2, base_channels >= 1, recurrence >= 1 required")
        if self.num_context < 2 or self.num_context % 2 != 0:
            raise ValueError("num_context must be an even count >= 2")


@dataclass(frozen=True)
class StudentConfig:
    levels: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.levels < 2 or self.base_channels < 1:
            raise ValueError("levels >= 2 and base_channels >= 1 required")


def config_hash(cfg) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


class MultiScaleExtractor(nn.Module):
    """Parallel same-size convolutions at several kernel sizes, concatenated.

    One extractor instance is shared across all frames of a window.
    """

    FILTERS = 32

    def __init__(self, mode: str = "full"):
        super().__init__()
        self.mode = mode
        if mode == "full":
            self.convs = nn.ModuleList([conv_same(1, self.FILTERS, k) for k in (3, 5, 7)])
            self.out_channels = 3 * self.FILTERS
        elif mode == "3x3":
            self.convs = nn.ModuleList([conv_same(1, self.FILTERS, 3)])
            self.out_channels = self.FILTERS
        else:                       # "off": frames pass through unchanged
            self.convs = nn.ModuleList([])
            self.out_channels = 1

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        if frame.shape[1] != 1:
            raise ValueError("extractor expects single-channel input")
        if not self.convs:
            return frame
        return torch.cat([conv(frame) for conv in self.convs], dim=1)


class R2Unit(nn.Module):
    """Recurrent residual convolution: the same 3x3 weights applied t times,
    each pass seeing the block input plus the previous response; the input is
    added back at the end.  Parameter count is independent of t."""

    def __init__(self, channels: int, t: int = 2):
        super().__init__()
        if t < 1:
            raise ValueError("t must be >= 1")
        self.t = t
        self.conv = conv_same(channels, channels, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        r = F.relu(self.conv(x))
        for _ in range(self.t - 1):
            r = F.relu(self.conv(x + r))
        return x + r


class R2Block(nn.Module):
    """Channel projection followed by a recurrent residual unit (or a plain
    convolution when the recurrent unit is ablated)."""

    def __init__(self, in_ch: int, out_ch: int, t: int = 2, recurrent: bool = True):
        super().__init__()
        self.entry = nn.Conv2d(in_ch, out_ch, 1)
        self.recurrent = recurrent
        if recurrent:
            self.unit = R2Unit(out_ch, t)
        else:
            self.unit = conv_same(out_ch, out_ch, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.entry(x)
        if self.recurrent:
            return self.unit(y)
        return F.relu(self.unit(y))


class AttentionGate(nn.Module):
    """Additive attention over a skip connection: a per-pixel sigmoid map in
    [0, 1] built from a joint 1x1 projection of skip and gating features."""

    def __init__(self, channels: int, inter: int = None):
        super().__init__()
        inter = inter or max(channels // 2, 1)
        self.w_gate = nn.Conv2d(channels, inter, 1)
        self.w_skip = nn.Conv2d(channels, inter, 1)
        self.psi = nn.Conv2d(inter, 1, 1)

    def attention(self, skip: torch.Tensor, gating: torch.Tensor) -> torch.Tensor:
        joint = F.relu(self.w_gate(gating) + self.w_skip(skip))
        return torch.sigmoid(self.psi(joint))

    def forward(self, skip: torch.Tensor, gating: torch.Tensor) -> torch.Tensor:
        return skip * self.attention(skip, gating)


class _UpStep(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = conv_same(in_ch, out_ch, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")))


def _check_divisible(h: int, w: int, levels: int) -> None:
    div = 2 ** (levels - 1)
    if h % div or w % div:
        raise ValueError(f"spatial size {h}x{w} must be divisible by {div}")


class TeacherNet(nn.Module):
    """Center-frame predictor operating on the stacked context frames."""

    kind = "teacher"

    def __init__(self, config: TeacherConfig = TeacherConfig()):
        super().__init__()
        self.config = config
        self.extractor = MultiScaleExtractor(config.multiscale)
        self.in_channels = config.num_context * self.extractor.out_channels
        c = [config.base_channels * 2 ** l for l in range(config.levels)]
        t, rec = config.recurrence, config.recurrent
        self.enc = nn.ModuleList(
            [R2Block(self.in_channels, c[0], t, rec)] +
            [R2Block(c[l - 1], c[l], t, rec) for l in range(1, config.levels)])
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleList([_UpStep(c[l + 1], c[l])
                                  for l in range(config.levels - 2, -1, -1)])
        self.gates = nn.ModuleList([AttentionGate(c[l])
                                    for l in range(config.levels - 2, -1, -1)])
        self.dec = nn.ModuleList([R2Block(2 * c[l], c[l], t, rec)
                                  for l in range(config.levels - 2, -1, -1)])
        self.head = nn.Conv2d(c[0], 1, 1)

    def extract(self, window: torch.Tensor) -> torch.Tensor:
        """Multi-scale features of every context frame, concatenated."""
        if window.shape[1] != self.config.num_context:
            raise ValueError(f"expected {self.config.num_context} context frames, "
                             f"got {window.shape[1]}")
        feats = [self.extractor(window[:, i:i + 1]) for i in range(window.shape[1])]
        return torch.cat(feats, dim=1)

    def forward(self, window: torch.Tensor) -> torch.Tensor:
        _check_divisible(window.shape[-2], window.shape[-1], self.config.levels)
        x = self.extract(window)
        skips: List[torch.Tensor] = []
        for i, block in enumerate(self.enc):
            if i > 0:
                x = self.pool(x)
            x = block(x)
            skips.append(x)
        for up, gate, block, skip in zip(self.ups, self.gates, self.dec,
                                         reversed(skips[:-1])):
            x = up(x)
            x = block(torch.cat([gate(skip, x), x], dim=1))
        # Predict a correction to the temporal mean of the context; the mean
        # is already an unbiased center estimate wherever the scene is static.
        return window.mean(dim=1, keepdim=True) + self.head(x)


class _DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.c1 = conv_same(in_ch, out_ch, 3)
        self.c2 = conv_same(out_ch, out_ch, 3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.c2(F.relu(self.c1(x))))


class StudentNet(nn.Module):
    """Single-frame encoder/decoder denoiser with plain skip connections."""

    kind = "student"

    def __init__(self, config: StudentConfig = StudentConfig()):
        super().__init__()
        self.config = config
        c = [config.base_channels * 2 ** l for l in range(config.levels)]
        self.enc = nn.ModuleList(
            [_DoubleConv(1, c[0])] +
            [_DoubleConv(c[l - 1], c[l]) for l in range(1, config.levels)])
        self.pool = nn.MaxPool2d(2)
        self.ups = nn.ModuleList([_UpStep(c[l + 1], c[l])
                                  for l in range(config.levels - 2, -1, -1)])
        self.dec = nn.ModuleList([_DoubleConv(2 * c[l], c[l])
                                  for l in range(config.levels - 2, -1, -1)])
        self.head = nn.Conv2d(c[0], 1, 1)

    def forward(self, frame: torch.Tensor) -> torch.Tensor:
        _check_divisible(frame.shape[-2], frame.shape[-1], self.config.levels)
        x = frame
        skips: List[torch.Tensor] = []
        for i, block in enumerate(self.enc):
            if i > 0:
                x = self.pool(x)
            x = block(x)
            skips.append(x)
        for up, block, skip in zip(self.ups, self.dec, reversed(skips[:-1])):
            x = up(x)
            x = block(torch.cat([skip, x], dim=1))
        # Residual denoiser: the net learns the noise correction.
        return frame + self.head(x)


_CONFIG_TYPES = {"teacher": TeacherConfig, "student": StudentConfig}
_NET_TYPES = {"teacher": TeacherNet, "student": StudentNet}


def save_checkpoint(net: nn.Module, path) -> None:
    torch.save({
        "kind": net.kind,
        "config": asdict(net.config),
        "config_hash": config_hash(net.config),
        "state": net.state_dict(),
    }, path)


def load_checkpoint(path, expected_kind: str = None) -> nn.Module:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    kind = payload.get("kind")
    if kind not in _NET_TYPES:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: is a {kind} checkpoint, need {expected_kind}")
    cfg = _CONFIG_TYPES[kind](**payload["config"])
    if config_hash(cfg) != payload.get("config_hash"):
        raise CheckpointError(f"{path}: architecture config hash mismatch")
    net = _NET_TYPES[kind](cfg)
    net.load_state_dict(payload["state"])
    net.eval()
    return net


def params_hash(net: nn.Module) -> str:
    """Stable digest of every parameter and buffer, for frozen-model checks."""
    digest = hashlib.sha256()
    for name, tensor in sorted(net.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
