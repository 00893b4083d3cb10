"""First-order recursive temporal filter over a 5-frame stack.

State update per frame: next = (1 - w) * state + w * frame, with the state
initialized to the first (oldest) frame.  First-frame initialization keeps the
output an exact convex combination of the inputs (weights sum to 1); zero
initialization would bias intensity downward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

STACK_LEN = 5


@dataclass(frozen=True)
class RecursiveFilterConfig:
    w: float = 0.2
    init_policy: str = "first_frame"

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError("w must be in (0, 1]")
        if self.init_policy not in ("first_frame", "zero"):
            raise ValueError(f"unknown init_policy {self.init_policy!r}")


def recursive_filter(stack: Sequence[np.ndarray],
                     cfg: RecursiveFilterConfig = RecursiveFilterConfig()) -> np.ndarray:
    """Run the recursion over a temporally ordered 5-frame stack."""
    if len(stack) != STACK_LEN:
        raise ValueError(f"expected a stack of {STACK_LEN} frames, got {len(stack)}")
    shape = stack[0].shape
    for frame in stack[1:]:
        if frame.shape != shape:
            raise ValueError("stack frames have mismatched shapes")
    if cfg.init_policy == "first_frame":
        state = np.array(stack[0], dtype=np.float64, copy=True)
    else:
        state = np.zeros(shape, dtype=np.float64)
    for frame in stack[1:]:
        state = (1.0 - cfg.w) * state + cfg.w * frame
    return state


def effective_weights(n: int, w: float) -> List[float]:
    """Closed-form per-frame weights of the unrolled recursion (oldest first).

    With first-frame initialization the oldest frame carries (1-w)^(n-1) and
    frame k (1-based from the second) carries w * (1-w)^(n-1-k); the weights
    telescope to exactly 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return [1.0]
    weights = [(1.0 - w) ** (n - 1)]
    weights += [w * (1.0 - w) ** (n - 1 - k) for k in range(1, n)]
    return weights


def noise_variance_ratio(n: int, w: float) -> float:
    """Output/input variance ratio for IID zero-mean noise: sum of squared weights."""
    return float(sum(wk * wk for wk in effective_weights(n, w)))
