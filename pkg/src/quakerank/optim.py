"""AdamW with decoupled weight decay, and a linear warmup / linear decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError


@dataclass(frozen=True)
class ScheduleConfig:
    peak_lr: float
    total_steps: int
    warmup_steps: int

    @classmethod
    def from_total(cls, peak_lr: float, total_steps: int, warmup_frac: float = 0.1) -> "ScheduleConfig":
        return cls(peak_lr, total_steps, max(1, math.ceil(warmup_frac * total_steps)))

    def __post_init__(self):
        if not 1 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"need 1 <= warmup_steps < total_steps, got W={self.warmup_steps}, T={self.total_steps}"
            )


def lr_at_step(cfg: ScheduleConfig, t: int) -> float:
    """Warmup ``a*(t+1)/W`` for ``t < W``, then ``a*(T-t)/(T-W)``."""
    T, W, a = cfg.total_steps, cfg.warmup_steps, cfg.peak_lr
    if not 0 <= t < T:
        raise IndexError(f"step {t} outside [0, {T})")
    if t < W:
        return a * (t + 1) / W
    return a * (T - t) / (T - W)


def decays(name: str, shape) -> bool:
    """Weight decay applies to multi-dimensional weights only, never biases."""
    return not name.endswith(".b") and len(shape) > 1


@dataclass
class AdamWState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    decay_mask: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict, **hyper) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            decay_mask={k: decays(k, p.shape) for k, p in params.items()},
            **hyper,
        )


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float) -> tuple[dict, AdamWState]:
    """One AdamW update. Arrays in ``params`` and ``state`` are updated in place and returned."""
    if lr < 0:
        raise ConfigError(f"learning rate must be >= 0, got {lr}")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {params[k].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"{k}: {bad} non-finite gradient entries at optimizer step {state.step + 1}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for k, theta in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.decay_mask.get(k, decays(k, theta.shape)):
            update = update + state.weight_decay * theta
        theta -= (lr * update).astype(theta.dtype, copy=False)
    return params, state
