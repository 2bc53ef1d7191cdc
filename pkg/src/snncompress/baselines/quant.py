"""Uniform fake quantization and trained ternary quantization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as tn
from ..errors import ContractError
from ..numeric import round_half_away
from ..tensor import Tensor

ALLOWED_BITS = (2, 4, 8)


def uniform_grid(w: np.ndarray, bits: int) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor grid: returns (dequantized values, step)."""
    if bits not in ALLOWED_BITS:
        raise ContractError(f"bits must be one of {ALLOWED_BITS}, got {bits}")
    qmax = 2 ** (bits - 1) - 1
    amax = float(np.abs(w).max()) if w.size else 0.0
    if amax == 0.0:
        return np.array(w, dtype=np.float64), 0.0
    step = amax / qmax
    return step * np.clip(round_half_away(w / step), -qmax, qmax), step


def uniform_fake_quant(w: Tensor, bits: int) -> Tensor:
    """Snap ``w`` onto its symmetric ``bits``-bit grid; gradient passes straight through.

    An all-zero tensor has no defined step and is returned unchanged.
    """
    q, _ = uniform_grid(w.data, bits)
    return tn.apply_op(q, (w,), lambda g: (g,), "fake_quant")


@dataclass
class TernaryLayer:
    latent: np.ndarray
    w_pos: float
    w_neg: float
    threshold_frac: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.threshold_frac < 1.0:
            raise ContractError(f"threshold_frac must lie in (0, 1), got {self.threshold_frac}")

    @classmethod
    def from_latent(cls, latent, threshold_frac: float = 0.05) -> "TernaryLayer":
        """Initialise both scales to the mean magnitude of the weights they will cover."""
        latent = np.asarray(latent, dtype=np.float64)
        pos, neg = ternary_masks(latent, threshold_frac)
        delta = threshold_frac * float(np.abs(latent).max())
        w_pos = float(np.abs(latent[pos]).mean()) if pos.any() else max(delta, 1e-3)
        w_neg = float(np.abs(latent[neg]).mean()) if neg.any() else max(delta, 1e-3)
        return cls(latent, w_pos, w_neg, threshold_frac)

    def forward(self) -> Tensor:
        return ternary_forward(Tensor(self.latent), Tensor(self.w_pos), Tensor(self.w_neg), self.threshold_frac)


def ternary_masks(latent: np.ndarray, threshold_frac: float):
    delta = threshold_frac * float(np.abs(latent).max()) if latent.size else 0.0
    return latent > delta, latent < -delta


def ternary_forward(latent: Tensor, w_pos: Tensor, w_neg: Tensor, threshold_frac: float) -> Tensor:
    """Map latent weights to {-w_neg, 0, +w_pos} around the threshold frac*max|latent|.

    Backward: each scale gets the chain-rule sum of upstream gradients over its
    region (negated for w_neg since that region's value is -w_neg); latent
    weights get straight-through gradients scaled by w_pos, w_neg or 1.
    """
    pos, neg = ternary_masks(latent.data, threshold_frac)
    wp, wn = float(w_pos.data), float(w_neg.data)
    out = np.where(pos, wp, 0.0) - np.where(neg, wn, 0.0)
    latent_scale = np.where(pos, wp, np.where(neg, wn, 1.0))

    def backward(g):
        return g * latent_scale, np.asarray((g * pos).sum()), np.asarray(-(g * neg).sum())

    return tn.apply_op(out, (latent, w_pos, w_neg), backward, "ternary")
