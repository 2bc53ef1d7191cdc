"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
                   betas=(0.9, 0.999), eps: float = 1e-8, no_decay=()) -> tuple[dict, AdamState]:
    """One AdamW update; returns new parameter arrays and the advanced state.

    Decay multiplies the parameter by (1 - lr * weight_decay) before the
    moment update and never touches the gradient.  Names listed in
    ``no_decay`` (codebook levels) skip the decay.  Missing gradients count
    as zero.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    b1, b2 = betas
    t = state.step + 1
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else g
        if name not in no_decay and weight_decay:
            p = p * (1.0 - lr * weight_decay)
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = t
    return out, state


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Cosine annealing from lr0 to 0 over ``total_steps``."""
    if total_steps <= 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0
