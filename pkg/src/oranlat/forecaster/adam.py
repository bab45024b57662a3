from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Weights


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: Weights
    v: Weights
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, weights: Weights) -> "AdamState":
        return cls(weights.zeros_like(), weights.zeros_like())


def adam_step(weights: Weights, grads: Weights, state: AdamState,
              lr: float) -> tuple[Weights, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    new_w, new_m, new_v = {}, {}, {}
    for name, g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        theta = getattr(weights, name)
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, g in grads:
        with np.errstate(over="ignore", invalid="ignore"):
            m = b1 * getattr(state.m, name) + (1.0 - b1) * g
            v = b2 * getattr(state.v, name) + (1.0 - b2) * (g * g)
            m_hat = m / corr1
            v_hat = v / corr2
            theta = getattr(weights, name) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(theta))):
            raise NonFiniteGradient(f"{name}: moment or parameter overflowed at step {t}")
        new_w[name] = theta
        new_m[name], new_v[name] = m, v
    return Weights(**new_w), AdamState(Weights(**new_m), Weights(**new_v), t, b1, b2, state.eps)
