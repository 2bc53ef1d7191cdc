"""Switch a network's layers between weight representations."""

from __future__ import annotations

import numpy as np

from .baselines.quant import TernaryLayer, uniform_grid
from .cat import init_codebook, quantize_codebook
from .errors import ContractError
from .network import Network


def _require(net: Network, allowed, stage: str):
    for layer in net.layers:
        if layer.mode not in allowed:
            raise ContractError(f"stage '{stage}' is incompatible with payload '{layer.mode}' of layer {layer.name}")


def to_qat(net: Network, bits: int) -> Network:
    _require(net, ("fp", "qat"), "qat")
    for layer in net.layers:
        uniform_grid(layer.weight, bits)
        layer.mode, layer.qat_bits = "qat", bits
    return net


def to_cat(net: Network, m: int, bitwidth: int = 8, quant_mode: str = "paper-exact", seed: int = 0) -> Network:
    """Give every layer a k-means-initialised learnable codebook of ``m`` levels."""
    _require(net, ("fp", "qat", "cat"), "cat")
    for i, layer in enumerate(net.layers):
        if layer.mode == "cat":
            continue
        if layer.mode == "qat":
            layer.weight = uniform_grid(layer.weight, layer.qat_bits)[0]
        cb = init_codebook(layer.weight, m, seed=seed + i, bitwidth=bitwidth)
        cb.mode = quant_mode
        layer.codebook, layer.mode, layer.qat_bits = cb, "cat", None
    return net


def to_ternary(net: Network, threshold_frac: float = 0.05) -> Network:
    _require(net, ("fp", "qat"), "ternary")
    for layer in net.layers:
        t = TernaryLayer.from_latent(layer.weight, threshold_frac)
        layer.mode, layer.w_pos, layer.w_neg, layer.threshold_frac = "ternary", t.w_pos, t.w_neg, threshold_frac
        layer.qat_bits = None
    return net


def quantize_codebooks(net: Network, bitwidth: int, mode: str | None = None) -> Network:
    _require(net, ("cat",), "quantize-codebook")
    for layer in net.layers:
        layer.codebook = quantize_codebook(layer.codebook, bitwidth, mode)
    return net


def unique_counts(net: Network) -> dict:
    return {layer.name: int(np.unique(layer.effective()).size) for layer in net.layers}
