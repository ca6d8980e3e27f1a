"""AdamW with decoupled weight decay, and the warmup + half-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter
from .errors import ContractError, NumericFailure


@dataclass
class LrSchedule:
    peak_lr: float
    floor_lr: float = 0.0
    warmup_epochs: int = 0
    total_epochs: int = 1

    def __post_init__(self):
        if self.peak_lr <= 0:
            raise ContractError("peak_lr must be positive")
        if self.floor_lr < 0 or self.floor_lr > self.peak_lr:
            raise ContractError("floor_lr must lie in [0, peak_lr]")
        if self.warmup_epochs < 0:
            raise ContractError("warmup_epochs must be non-negative")
        if self.total_epochs <= self.warmup_epochs:
            raise ContractError("total_epochs must exceed warmup_epochs")


def cosine_lr(epoch: int, sched: LrSchedule) -> float:
    """Linear ramp 0 -> peak over warmup, then half-cosine down to floor."""
    if epoch < 0 or epoch > sched.total_epochs:
        raise ContractError(
            f"epoch {epoch} outside [0, {sched.total_epochs}]"
        )
    if epoch < sched.warmup_epochs:
        return sched.peak_lr * epoch / sched.warmup_epochs
    span = sched.total_epochs - sched.warmup_epochs
    t = (epoch - sched.warmup_epochs) / span
    return sched.floor_lr + 0.5 * (sched.peak_lr - sched.floor_lr) * (
        1.0 + math.cos(math.pi * t)
    )


@dataclass
class OptimizerState:
    """Per-parameter AdamW moments plus hyperparameters and step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: list[Parameter], state: OptimizerState, lr: float | None = None) -> OptimizerState:
    """One AdamW update in place: decoupled multiplicative decay, bias-corrected
    moments. Raises NumericFailure on any non-finite gradient."""
    if lr is None:
        lr = state.lr
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = p.gradient
        if not np.isfinite(g).all():
            raise NumericFailure(f"non-finite gradient for parameter {p.name!r}")
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state
