"""Adam with bias correction and cyclic cosine annealing."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, pi

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per named parameter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                   v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
                   t=0)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One bias-corrected Adam update; parameters are updated in place."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {k!r}")
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        step = lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + eps)
        p -= step.astype(p.dtype, copy=False)
    return params


def cosine_window(phase: float, lr0: float, eta_min: float = 0.0) -> float:
    """Cosine decay from lr0 (phase 0) down to eta_min (phase 1)."""
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + cos(pi * phase))


def cosine_lr(step: int, steps_per_period: int, lr0: float, eta_min: float = 0.0) -> float:
    """Cyclic cosine-annealed rate: restarts at lr0 every ``steps_per_period``."""
    if steps_per_period < 1:
        raise ValueError(f"steps_per_period must be >= 1, got {steps_per_period}")
    return cosine_window((step % steps_per_period) / steps_per_period, lr0, eta_min)
