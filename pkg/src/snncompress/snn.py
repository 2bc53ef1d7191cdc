"""Discrete leaky integrate-and-fire dynamics and time-unrolled execution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class LifConfig:
    beta: float = 0.5
    u_thr: float = 1.0
    t_steps: int = 4
    surrogate_alpha: float = 2.0
    readout: str = "mean"
    # Smooth arctan in the forward pass too; used for end-to-end gradient checks.
    smooth: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ContractError(f"beta must lie in (0, 1], got {self.beta}")
        if self.u_thr <= 0:
            raise ContractError(f"u_thr must be positive, got {self.u_thr}")
        if self.t_steps < 1:
            raise ContractError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.surrogate_alpha <= 0:
            raise ContractError(f"surrogate_alpha must be positive, got {self.surrogate_alpha}")
        if self.readout not in ("mean", "sum"):
            raise ContractError(f"readout must be 'mean' or 'sum', got {self.readout!r}")


@dataclass
class LifState:
    u: Tensor
    s: Tensor

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def surrogate_derivative(x: np.ndarray, alpha: float) -> np.ndarray:
    """Arctangent surrogate: alpha / (2 (1 + (pi/2 * alpha * x)^2))."""
    return alpha / (2.0 * (1.0 + (0.5 * math.pi * alpha * x) ** 2))


def surrogate_spike(x: Tensor, alpha: float = 2.0, smooth: bool = False) -> Tensor:
    """Heaviside step 1(x > 0) whose backward pass uses the arctangent surrogate.

    With ``smooth=True`` the forward value is the arctangent curve itself,
    0.5 + atan(pi/2 * alpha * x) / pi, whose exact derivative is the surrogate.
    """
    xd = x.data
    if smooth:
        out = 0.5 + np.arctan(0.5 * math.pi * alpha * xd) / math.pi
    else:
        out = (xd > 0).astype(np.float64)
    return tn.apply_op(out, (x,), lambda g: (g * surrogate_derivative(xd, alpha),), "spike")


def lif_step(i_in: Tensor, state: LifState, cfg: LifConfig) -> tuple[Tensor, LifState]:
    """One soft-reset update: u' = beta*u + i_in - beta*s*u_thr, spike = 1(u' > u_thr).

    ``state.s`` holds the previous step's spikes.
    """
    if i_in.shape != state.u.shape or i_in.shape != state.s.shape:
        raise DimensionError(f"lif_step: input {i_in.shape} vs state {state.u.shape}/{state.s.shape}")
    u = tn.sub(tn.add(tn.scale(state.u, cfg.beta), i_in), tn.scale(state.s, cfg.beta * cfg.u_thr))
    s = surrogate_spike(tn.sub(u, cfg.u_thr), cfg.surrogate_alpha, cfg.smooth)
    return s, LifState(u, s)


def lif_sequence(currents: Tensor, cfg: LifConfig) -> Tensor:
    """Run LIF over axis 1 of an N x T x ... current tensor; returns spikes of the same shape."""
    t_steps = currents.shape[1]
    state = LifState.zeros((currents.shape[0],) + currents.shape[2:])
    spikes = []
    for t in range(t_steps):
        s, state = lif_step(tn.index(currents, t, axis=1), state, cfg)
        spikes.append(s)
    return tn.stack(spikes, axis=1)


def encode_replicate(x: Tensor, t_steps: int) -> Tensor:
    """N x C x H x W -> N x T x C x H x W by copying the input into every time slot."""
    if t_steps < 1:
        raise ContractError(f"t_steps must be >= 1, got {t_steps}")
    return tn.stack([x] * t_steps, axis=1)


@dataclass
class SynapticBlock:
    """One weighted layer of an unrolled network, with its effective weight already built."""

    op: str
    weight: Tensor
    stride: int = 1
    pad: int = 0
    pool: bool = False
    spiking: bool = True
    gate: object = None


@dataclass
class UnrollResult:
    logits: Tensor
    activity: list = field(default_factory=list)


def _synapse(block: SynapticBlock, h: Tensor) -> Tensor:
    if block.op == "conv":
        return tn.conv2d(h, block.weight, block.stride, block.pad)
    if block.op == "dense":
        return tn.dense(h, block.weight)
    raise ContractError(f"unknown synaptic op {block.op!r}")


def unroll_network(blocks, x_seq: Tensor, cfg: LifConfig) -> UnrollResult:
    """Time-distributed forward pass of {conv/dense -> LIF} blocks and a non-spiking head.

    Because the blocks have no recurrence, each layer's synaptic op is applied
    to all T slices at once (time folded into the batch) and only the LIF
    state is iterated step by step.  ``activity`` holds each spiking block's
    N x T x C x ... output spikes; their ``grad`` is dL/dy after backward.
    """
    blocks = list(blocks)
    if not blocks:
        raise ContractError("unroll_network: empty network")
    if x_seq.ndim < 3 or x_seq.shape[1] == 0:
        raise ContractError(f"unroll_network: expected N x T x ... input with T >= 1, got {x_seq.shape}")
    if blocks[-1].spiking:
        raise ContractError("unroll_network: last block must be a non-spiking classifier head")
    n, t_steps = x_seq.shape[:2]
    h = tn.reshape(x_seq, (n * t_steps,) + x_seq.shape[2:])
    activity = []
    for block in blocks[:-1]:
        cur = _synapse(block, h)
        cur = tn.reshape(cur, (n, t_steps) + cur.shape[1:])
        y = lif_sequence(cur, cfg) if block.spiking else cur
        if block.gate is not None:
            y = tn.channel_scale(y, block.gate, axis=2)
        if block.spiking:
            activity.append(y)
        h = tn.reshape(y, (n * t_steps,) + y.shape[2:])
        if block.pool:
            h = tn.avg_pool2d(h, 2)
    out = _synapse(blocks[-1], h)
    out = tn.reshape(out, (n, t_steps, out.shape[1]))
    logits = tn.mean(out, axes=1) if cfg.readout == "mean" else tn.sum(out, axes=1)
    return UnrollResult(logits, activity)
