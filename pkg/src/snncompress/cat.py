"""Clusterization-aware training: learnable per-layer codebooks.

Each CAT layer keeps full-precision latent weights and a codebook of M
levels.  The forward pass snaps every latent weight to its nearest level;
the backward pass hands the upstream gradient to the latent weights
unchanged (straight-through) and, through the codebook read, to the levels.
A commitment loss pulls each level toward the latents assigned to it.

Public level indices k* are 1-based (1..M); array gathers subtract one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tn
from .baselines.kmeans import kmeans_1d
from .errors import ContractError, DimensionError, StateError
from .numeric import round_half_away
from .tensor import Tensor

QUANT_MODES = ("paper-exact", "resolution-preserving")
ALLOWED_BITS = (2, 4, 8)


@dataclass
class Codebook:
    levels: np.ndarray
    bitwidth: int = 8
    scale: float | None = None
    q_levels: np.ndarray | None = None
    mode: str = "paper-exact"
    trainable: bool = True

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64).reshape(-1)
        if self.levels.size < 2:
            raise ContractError(f"a codebook needs at least 2 levels, got {self.levels.size}")
        if not np.isfinite(self.levels).all():
            raise ContractError("codebook levels must be finite")
        if self.q_levels is not None:
            self.q_levels = np.asarray(self.q_levels, dtype=np.int64).reshape(-1)

    @property
    def m(self) -> int:
        return int(self.levels.size)

    @property
    def quantized(self) -> bool:
        return self.q_levels is not None

    def dequantized(self) -> np.ndarray:
        if self.q_levels is None:
            raise StateError("codebook has not been quantized")
        return self.scale * self.q_levels.astype(np.float64)


def init_codebook(latent, m: int, seed: int = 0, bitwidth: int = 8) -> Codebook:
    """k-means centroids of the latent weights as the starting levels."""
    res = kmeans_1d(np.asarray(latent).reshape(-1), m, seed=seed)
    return Codebook(res.centroids, bitwidth=bitwidth)


def _nearest(values: np.ndarray, table: np.ndarray) -> np.ndarray:
    # argmin keeps the first (lowest-index) level on exact ties.
    d = (values.reshape(-1, 1) - table.reshape(1, -1)) ** 2
    return np.argmin(d, axis=1).reshape(values.shape)


def assign(latent, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """1-based nearest-level index k* per weight and the snapped weights (ties to the lowest index)."""
    levels = codebook.levels if isinstance(codebook, Codebook) else np.asarray(codebook, dtype=np.float64)
    if levels.size == 0:
        raise ContractError("cannot assign against an empty codebook")
    w = latent.data if isinstance(latent, Tensor) else np.asarray(latent, dtype=np.float64)
    k = _nearest(w, levels)
    return k + 1, levels[k]


def effective_weight(latent: Tensor, w_q: Tensor) -> Tensor:
    """Value of ``w_q``, gradient of identity to ``latent``.

    Equivalent to latent + stopgrad(w_q - latent) for the latent path; the
    upstream gradient also reaches ``w_q`` when it is part of the graph (a
    codebook read), which is how levels receive task-loss gradients.
    """
    if latent.shape != w_q.shape:
        raise DimensionError(f"effective_weight: latent {latent.shape} vs snapped {w_q.shape}")
    return tn.apply_op(w_q.data, (latent, w_q), lambda g: (g, g), "ste")


def commitment_loss(w_q: Tensor, latent: Tensor) -> Tensor:
    """mean((w_q - stopgrad(latent))^2); only the codebook side receives gradient."""
    if latent.shape != w_q.shape:
        raise DimensionError(f"commitment_loss: snapped {w_q.shape} vs latent {latent.shape}")
    return tn.mean(tn.square(tn.sub(w_q, tn.detach(latent))))


def total_loss(task, commit, beta_commit: float = 0.5):
    if beta_commit < 0:
        raise ContractError(f"beta_commit must be >= 0, got {beta_commit}")
    if isinstance(task, Tensor) or isinstance(commit, Tensor):
        return tn.add(tn.as_tensor(task), tn.scale(tn.as_tensor(commit), beta_commit))
    return task + beta_commit * commit


def quantize_codebook(codebook: Codebook, bitwidth: int, mode: str | None = None) -> Codebook:
    """Integer image of the levels: c_hat = clip(round(c / s), R_b).

    paper-exact: s = max(max(C) - min(C), 1).  Any codebook whose range is at
    most 1 lands on {-1, 0, 1} whatever the bit-width.
    resolution-preserving: s = max(max(C) - min(C), eps) / (2^(b-1) - 1), so
    the b bits resolve the codebook's own range.  Levels that straddle zero
    never clip; a one-signed codebook can.
    Rounding is half away from zero.
    """
    if bitwidth not in ALLOWED_BITS:
        raise ContractError(f"bitwidth must be one of {ALLOWED_BITS}, got {bitwidth}")
    mode = mode or codebook.mode
    if mode not in QUANT_MODES:
        raise ContractError(f"unknown codebook quantization mode {mode!r}")
    c = codebook.levels
    qmax = 2 ** (bitwidth - 1) - 1
    if mode == "paper-exact":
        s = max(float(c.max() - c.min()), 1.0)
    else:
        s = max(float(c.max() - c.min()), 1e-12) / qmax
    q = np.clip(round_half_away(c / s), -qmax, qmax).astype(np.int64)
    return replace(codebook, bitwidth=bitwidth, scale=s, q_levels=q, mode=mode)


def reconstruct_quantized(latent, codebook: Codebook) -> tuple[np.ndarray, np.ndarray]:
    """Snap latents to the dequantized levels s * c_hat; returns (weights, 1-based indices)."""
    if codebook.q_levels is None:
        raise StateError("reconstruct_quantized needs a quantized codebook (q_levels missing)")
    table = codebook.dequantized()
    w = latent.data if isinstance(latent, Tensor) else np.asarray(latent, dtype=np.float64)
    k = _nearest(w, table)
    return table[k], k + 1


def level_usage(k: np.ndarray, m: int) -> np.ndarray:
    """Weights per level for 1-based indices ``k``."""
    return np.bincount(np.asarray(k).reshape(-1) - 1, minlength=m)


def reseed_dead_levels(latent, codebook: Codebook, usage) -> Codebook:
    """Move every level that attracted no weights onto the worst-served latent weight."""
    usage = np.asarray(usage)
    dead = np.flatnonzero(usage == 0)
    if dead.size == 0:
        return codebook
    w = np.asarray(latent, dtype=np.float64).reshape(-1)
    levels = codebook.levels.copy()
    for k in dead:
        _, snapped = assign(w, levels)
        levels[k] = w[int(np.argmax((w - snapped) ** 2))]
    return replace(codebook, levels=levels)


@dataclass
class CatLayer:
    """Latent weights plus their codebook, as used inside a CAT network layer."""

    latent: np.ndarray
    codebook: Codebook
    assignment: np.ndarray | None = None

    def __post_init__(self):
        self.latent = np.asarray(self.latent, dtype=np.float64)
        if self.assignment is None:
            self.assignment, _ = assign(self.latent, self.codebook)

    def build(self, latent: Tensor, levels: Tensor, task_grad_to_codebook: bool = True):
        """Graph pieces for one forward pass: (effective weight, snapped weights for the commitment loss)."""
        k = _nearest(latent.data, levels.data)
        self.assignment = k + 1
        w_q = tn.gather(levels, k)
        w_eff = effective_weight(latent, w_q if task_grad_to_codebook else tn.detach(w_q))
        return w_eff, w_q

    def effective(self) -> np.ndarray:
        if self.codebook.quantized:
            return reconstruct_quantized(self.latent, self.codebook)[0]
        return assign(self.latent, self.codebook)[1]
