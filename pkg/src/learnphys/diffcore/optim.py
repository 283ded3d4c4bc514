"""Adam with bias correction, global-norm clipping and a staircase decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(state: AdamState, params: dict, grads: dict, lr: float | None = None):
    """Returns ``(new_params, new_state)``; inputs are left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    lr = state.lr if lr is None else lr
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params, new_m, new_v = dict(params), {}, {}
    for name, p in params.items():
        g = grads.get(name)
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        if m_prev is None:
            m_prev = np.zeros_like(p)
            v_prev = np.zeros_like(p)
        if g is None:
            new_m[name], new_v[name] = m_prev, v_prev
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = b1 * m_prev + (1.0 - b1) * g
        v = b2 * v_prev + (1.0 - b2) * g * g
        new_params[name] = p - lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)


def decayed_lr(lr0: float, step: int, factor: float, interval: int) -> float:
    """Staircase exponential decay: ``lr0 * factor ** (step // interval)``."""
    return lr0 * factor ** (step // interval)
