"""Frame-stack I/O and training-window construction.

Storage container is 16-bit binary PGM (P5, maxval 65535) plus a line-oriented
text manifest.  Intensities are normalized as v = raw / 65535 on load and
round(v * 65535) on save, which makes the round trip lossless at 16 bits.

Manifest format (one entry per line, order defines frame order)::

    dose clean                     # or: dose <photons> <read_sigma>
    seed <int>
    spec_hash <hex or '-'>
    frame <index> <relative-path>
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .phantom import DoseLevel, FrameSequence


class MalformedPGMError(ValueError):
    """File is not a P5 PGM with maxval 65535."""


class ManifestError(ValueError):
    """Manifest text is malformed or inconsistent."""


class ShapeMismatchError(ValueError):
    """Frames referenced by one manifest differ in shape."""


MAXVAL = 65535


def write_pgm(path: Union[str, Path], frame: np.ndarray) -> None:
    """Write a [0,1] float frame as a 16-bit big-endian P5 PGM."""
    path = Path(path)
    raw = np.rint(np.clip(frame, 0.0, 1.0) * MAXVAL).astype(">u2")
    h, w = raw.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii"))
        f.write(raw.tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Read a 16-bit P5 PGM into a [0,1] float64 frame."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise MalformedPGMError(f"{path}: not a binary PGM (P5)")
    # Header = magic, width, height, maxval tokens; '#' starts a comment.
    tokens: List[int] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise MalformedPGMError(f"{path}: truncated header")
        c = data[pos:pos + 1]
        if c == b"#":
            pos = data.index(b"\n", pos) + 1
        elif c.isspace():
            pos += 1
        else:
            m = re.match(rb"\d+", data[pos:])
            if not m:
                raise MalformedPGMError(f"{path}: bad header token")
            tokens.append(int(m.group(0)))
            pos += m.end()
    if not data[pos:pos + 1].isspace():
        raise MalformedPGMError(f"{path}: missing separator after maxval")
    pos += 1
    w, h, maxval = tokens
    if maxval != MAXVAL:
        raise MalformedPGMError(f"{path}: maxval {maxval}, expected {MAXVAL}")
    expected = w * h * 2
    body = data[pos:pos + expected]
    if len(body) != expected:
        raise MalformedPGMError(f"{path}: expected {expected} pixel bytes, got {len(body)}")
    raw = np.frombuffer(body, dtype=">u2").reshape(h, w)
    return raw.astype(np.float64) / MAXVAL


def save_sequence(seq: FrameSequence, out_dir: Union[str, Path],
                  frame_subdir: str = "frames") -> Path:
    """Write one PGM per frame plus the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / frame_subdir).mkdir(parents=True, exist_ok=True)
    lines = []
    if seq.dose == "clean":
        lines.append("dose clean")
    else:
        lines.append(f"dose {seq.dose.photons_per_unit_intensity!r} {seq.dose.read_noise_sigma!r}")
    lines.append(f"seed {seq.seed}")
    lines.append(f"spec_hash {seq.spec_hash or '-'}")
    for i, frame in enumerate(seq.frames):
        rel = f"{frame_subdir}/frame_{i:05d}.pgm"
        write_pgm(out_dir / rel, frame)
        lines.append(f"frame {i} {rel}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_sequence(manifest_path: Union[str, Path]) -> FrameSequence:
    """Load a sequence from its manifest; frame order follows the manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(str(manifest_path))
    base = manifest_path.parent
    dose: Union[DoseLevel, str, None] = None
    seed = 0
    spec_hash: Optional[str] = None
    entries: List[Tuple[int, str]] = []
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "dose":
            if parts[1] == "clean":
                dose = "clean"
            else:
                try:
                    dose = DoseLevel(float(parts[1]), float(parts[2]))
                except (IndexError, ValueError) as exc:
                    raise ManifestError(f"{manifest_path}:{lineno}: bad dose line") from exc
        elif key == "seed":
            seed = int(parts[1])
        elif key == "spec_hash":
            spec_hash = None if parts[1] == "-" else parts[1]
        elif key == "frame":
            try:
                entries.append((int(parts[1]), parts[2]))
            except (IndexError, ValueError) as exc:
                raise ManifestError(f"{manifest_path}:{lineno}: bad frame line") from exc
        else:
            raise ManifestError(f"{manifest_path}:{lineno}: unknown key {key!r}")
    if dose is None:
        raise ManifestError(f"{manifest_path}: missing dose header")
    if not entries:
        raise ManifestError(f"{manifest_path}: no frame entries")
    if [idx for idx, _ in entries] != list(range(len(entries))):
        raise ManifestError(f"{manifest_path}: frame indices not contiguous from 0")
    frames = []
    shape = None
    for idx, rel in entries:
        frame = read_pgm(base / rel)
        if shape is None:
            shape = frame.shape
        elif frame.shape != shape:
            raise ShapeMismatchError(
                f"frame {idx} has shape {frame.shape}, expected {shape}")
        frames.append(frame)
    return FrameSequence(frames=np.stack(frames), dose=dose, seed=seed,
                         spec_hash=spec_hash)


@dataclass
class TrainingWindow:
    """A center frame plus its symmetric context, center excluded.

    For the default half-width 2, ``context`` holds the frames at offsets
    [-2, -1, +1, +2] relative to ``index``.
    """

    context: List[np.ndarray]
    center: np.ndarray
    index: int

    @property
    def stack(self) -> List[np.ndarray]:
        """All frames in temporal order, center in the middle."""
        half = len(self.context) // 2
        return list(self.context[:half]) + [self.center] + list(self.context[half:])


@dataclass
class PatchSample:
    """A training window cropped to a square patch at one shared offset."""

    window: TrainingWindow
    offset: Tuple[int, int]
    source: Optional[TrainingWindow] = None   # uncropped parent window


def make_windows(seq: FrameSequence, half_width: int = 2) -> List[TrainingWindow]:
    """One window per valid center index; needs 2*half_width context frames."""
    n = len(seq)
    if n < 2 * half_width + 1:
        raise ValueError(f"sequence of {n} frames too short for half-width {half_width}")
    windows = []
    for i in range(half_width, n - half_width):
        context = [seq.frames[i + d] for d in range(-half_width, half_width + 1) if d != 0]
        windows.append(TrainingWindow(context=context, center=seq.frames[i], index=i))
    return windows


def crop_window(window: TrainingWindow, offset: Tuple[int, int], patch: int) -> TrainingWindow:
    r, c = offset
    sl = (slice(r, r + patch), slice(c, c + patch))
    return TrainingWindow(context=[f[sl] for f in window.context],
                          center=window.center[sl], index=window.index)


def sample_patches(windows: Sequence[TrainingWindow], count: int,
                   patch: int = 64, seed: int = 0) -> List[PatchSample]:
    """Uniformly random (window, offset) draws, one shared offset per sample."""
    if not windows:
        raise ValueError("no windows to sample from")
    h, w = windows[0].center.shape
    if h < patch or w < patch:
        raise ValueError(f"frames {h}x{w} smaller than patch {patch}")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        wi = int(rng.integers(0, len(windows)))
        r = int(rng.integers(0, h - patch + 1))
        c = int(rng.integers(0, w - patch + 1))
        win = windows[wi]
        samples.append(PatchSample(window=crop_window(win, (r, c), patch),
                                   offset=(r, c), source=win))
    return samples


def split_train_val(samples: Sequence[PatchSample], val_fraction: float = 0.05,
                    seed: int = 0) -> Tuple[List[PatchSample], List[PatchSample]]:
    """Disjoint shuffle split with |val| = round(val_fraction * |samples|)."""
    if not samples:
        raise ValueError("cannot split an empty sample list")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_val = int(round(val_fraction * len(samples)))
    val = [samples[i] for i in order[:n_val]]
    train = [samples[i] for i in order[n_val:]]
    return train, val


def sequence_stats(seq: FrameSequence) -> dict:
    frames = seq.frames
    return {
        "num_frames": frames.shape[0],
        "height": frames.shape[1],
        "width": frames.shape[2],
        "min": float(frames.min()),
        "max": float(frames.max()),
        "mean": float(frames.mean()),
        "std": float(frames.std()),
    }
