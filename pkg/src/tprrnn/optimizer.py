"""Nadam and the warm-up / halving / NaN-restart training schedule."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class OptimizerPreset:
    lr: float
    beta1: float
    beta2: float
    batch_size: int


PRESETS = {
    "single-task": OptimizerPreset(lr=0.008, beta1=0.6, beta2=0.4, batch_size=128),
    "all-tasks": OptimizerPreset(lr=0.001, beta1=0.9, beta2=0.999, batch_size=32),
}


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class NadamState:
    lr: float = 0.008
    beta1: float = 0.6
    beta2: float = 0.4
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def reset(self):
        self.step_count = 0
        self.m.clear()
        self.v.clear()


def nadam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: NadamState, lr: float | None = None) -> None:
    """Apply one Nadam update in place.

    With bias-corrected moments ``m_hat`` and ``v_hat`` at step ``t``::

        theta -= lr * (beta1 * m_hat + (1 - beta1) * g / (1 - beta1**t))
                    / (sqrt(v_hat) + eps)

    ``lr`` overrides ``state.lr`` for this step (used by the schedule).
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"gradient of {name} is not finite")
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        update = (b1 * m_hat + (1.0 - b1) * g / c1) / (np.sqrt(v_hat) + state.eps)
        params[name][...] -= lr * update


@dataclass
class Schedule:
    base_lr: float
    warmup_steps: int = 50
    warmup_factor: float = 0.1
    halve_threshold: float = 0.1
    halve_factor: float = 0.5
    halved: bool = False

    def observe_val_loss(self, val_loss: float) -> None:
        """Latch the single-shot halving once validation loss drops below threshold."""
        if val_loss < self.halve_threshold:
            self.halved = True

    def lr(self, step: int) -> float:
        if step < 1:
            raise ValueError("steps are counted from 1")
        lr = self.base_lr * (self.halve_factor if self.halved else 1.0)
        if step <= self.warmup_steps:
            lr *= self.warmup_factor
        return lr


def effective_lr(schedule: Schedule, step: int, best_val_loss: float = float("inf")) -> float:
    """Learning rate at ``step`` given the best validation loss seen so far."""
    schedule.observe_val_loss(best_val_loss)
    return schedule.lr(step)


class NanAction(enum.Enum):
    REINITIALIZE = "reinitialize"
    ABORT = "abort"


def nan_policy(step: int, warmup_steps: int = 50) -> NanAction:
    """Reinitialise from scratch inside warm-up, abort afterwards."""
    return NanAction.REINITIALIZE if step <= warmup_steps else NanAction.ABORT
