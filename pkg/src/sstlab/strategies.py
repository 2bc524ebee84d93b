"""Desired-output computation for the six tuning strategies.

A frame flow is processed in order; `TemporalState` carries the output
recorded at the previous frame and the running fused accumulator. The
accumulator halves the weight of each older output at every step, a sum
rule fusion where distant frames progressively vanish.

`desired_output` returns the target vector for the current frame, or
None when no update should be applied (operationally equivalent to
passing the current output back to the squared-error loss: the gradient
is zero either way, so we skip the step).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class MissingLabel(Exception):
    pass


class MissingState(Exception):
    pass


class StrategyKind(Enum):
    SUPT = "supt"
    SUPTR = "suptr"
    SST_B = "sst-b"
    SST_A = "sst-a"
    SST_A_DELTA = "sst-a-delta"
    SST_A_DELTA_NOTC = "sst-a-delta-notc"

    @property
    def needs_label(self) -> bool:
        return self in (StrategyKind.SUPT, StrategyKind.SUPTR)


@dataclass
class StrategyConfig:
    lam: float = 2 / 3  # weight of the supervised component
    sc: float = 0.65    # self-confidence threshold
    n_w: int = 5

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lam must be in [0,1]")
        if self.n_w < 1:
            raise ValueError("n_w must be >= 1")


@dataclass
class TemporalState:
    t: int = 1
    prev_output: np.ndarray | None = None
    f: np.ndarray | None = None


def delta_vector(w: int, n_w: int) -> np.ndarray:
    if not (0 <= w < n_w):
        raise IndexError(f"class index {w} out of range for {n_w} classes")
    d = np.zeros(n_w)
    d[w] = 1.0
    return d


def advance_temporal(state: TemporalState, new_prev_output: np.ndarray) -> TemporalState:
    """Move to the next frame, recording the output just produced.

    The accumulator starts as the first recorded output and is then
    averaged pairwise with each newer one: f <- (f + N(prev)) / 2.
    """
    out = np.asarray(new_prev_output, dtype=np.float64).copy()
    if state.t == 1:
        f = out.copy()
    else:
        f = (state.f + out) / 2.0
    return TemporalState(t=state.t + 1, prev_output=out, f=f)


def desired_output(
    kind: StrategyKind,
    cfg: StrategyConfig,
    state: TemporalState,
    current_output: np.ndarray,
    label: int | None = None,
) -> np.ndarray | None:
    """Target vector for the current frame, or None to skip the update."""
    cur = np.asarray(current_output, dtype=np.float64)
    if kind.needs_label:
        if label is None:
            raise MissingLabel(f"{kind.value} requires a class label")
    if kind is StrategyKind.SUPT:
        return delta_vector(label, cfg.n_w)
    if kind is StrategyKind.SUPTR:
        if state.prev_output is None:
            return delta_vector(label, cfg.n_w)
        return cfg.lam * delta_vector(label, cfg.n_w) + (1.0 - cfg.lam) * state.prev_output
    if state is None:
        raise MissingState(f"{kind.value} requires a frame-flow state")
    if kind is StrategyKind.SST_B:
        if state.prev_output is None:
            return None
        return state.prev_output.copy()
    if kind is StrategyKind.SST_A:
        if state.f is None:
            return None
        if float(state.f.max()) > cfg.sc:
            return state.f.copy()
        return None
    if kind is StrategyKind.SST_A_DELTA:
        if state.f is None:
            return None
        if float(state.f.max()) > cfg.sc:
            return delta_vector(int(state.f.argmax()), cfg.n_w)
        return None
    if kind is StrategyKind.SST_A_DELTA_NOTC:
        if float(cur.max()) > cfg.sc:
            return delta_vector(int(cur.argmax()), cfg.n_w)
        return None
    raise ValueError(f"unknown strategy {kind!r}")
