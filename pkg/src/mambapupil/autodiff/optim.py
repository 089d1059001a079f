"""Adam with bias correction and the cosine-annealing warm-restart schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
              lr: float | None = None) -> None:
    """One in-place Adam update. Moments are keyed by position in ``params``."""
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class LrSchedule:
    eta_max: float = 0.002
    eta_min: float = 0.0
    t0: int = 10
    t_mult: int = 1

    def __post_init__(self) -> None:
        if not self.eta_max >= self.eta_min >= 0:
            raise ValueError("need eta_max >= eta_min >= 0")
        if self.t0 < 1 or self.t_mult < 1:
            raise ValueError("need t0 >= 1 and t_mult >= 1")


def cycle_position(schedule: LrSchedule, epoch: int) -> tuple[int, int]:
    """(t_cur, T_i) for ``epoch``: epochs into the current cycle and its length."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t_i = schedule.t0
    t_cur = epoch
    if schedule.t_mult == 1:
        return t_cur % t_i, t_i
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= schedule.t_mult
    return t_cur, t_i


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    t_cur, t_i = cycle_position(schedule, epoch)
    if t_cur == 0:
        return schedule.eta_max
    return schedule.eta_min + (schedule.eta_max - schedule.eta_min) * (1 + math.cos(math.pi * t_cur / t_i)) / 2
