"""Deployability metrics: size, energy, latency, classification scores, DeployRatio."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def model_size_mb(param_count: int, bits_per_weight: float) -> float:
    """S = P * b / (8 * 10^6)."""
    if param_count <= 0 or bits_per_weight <= 0:
        raise ContractError("param_count and bits_per_weight must be positive")
    return param_count * bits_per_weight / 8e6


def network_size_mb(net, mode: str = "paper") -> float:
    """Size of a network's synaptic storage.

    ``paper`` charges every weight its nominal bit-width.  ``index`` charges
    codebook layers ceil(log2 M) bits per weight plus M levels at b bits.
    """
    bits = 0.0
    for layer in net.layers:
        p = layer.weight.size
        if mode == "index" and layer.mode == "cat":
            m = layer.codebook.m
            bits += p * max(1, math.ceil(math.log2(m))) + m * layer.bits()
        elif mode in ("paper", "index"):
            bits += p * layer.bits()
        else:
            raise ContractError(f"unknown size mode {mode!r}")
    return bits / 8e6


@dataclass(frozen=True)
class EnergyModel:
    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9
    spike_rate: float = 0.2
    t_steps: int = 4

    def __post_init__(self):
        if min(self.e_mac_pj, self.e_ac_pj) <= 0 or self.t_steps < 1 or self.spike_rate < 0:
            raise ContractError("energy constants must be positive")


def energy_from_counts(mac_count: float, ac_counts, rates, em: EnergyModel) -> float:
    """mJ for one inference: MACs at e_mac plus sum(AC * rate * T) at e_ac."""
    ac_counts = np.asarray(ac_counts, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    pj = mac_count * em.e_mac_pj + float((ac_counts * rates).sum()) * em.t_steps * em.e_ac_pj
    return pj * 1e-9


def layer_spike_rates(net, x) -> list[float]:
    res = net.forward(x, leaves=net.make_leaves(False))
    return [float(a.data.mean()) for a in res.activity]


def energy_mj(net, x=None, em: EnergyModel | None = None) -> float:
    """Energy per inference.

    The first layer sees analog input, which is identical at every step, so
    its MACs are charged once.  Later layers receive spikes and are charged
    accumulates times the presynaptic firing rate times T.  Rates are
    measured on ``x`` when given, otherwise ``em.spike_rate`` is used.
    """
    em = em or EnergyModel(t_steps=net.lif.t_steps)
    shapes = net.shapes()
    if x is not None:
        rates = layer_spike_rates(net, x)
    else:
        rates = [em.spike_rate] * len(net.hidden)
    acs = [s["macs"] for s in shapes[1:]]
    return energy_from_counts(shapes[0]["macs"], acs, rates[: len(acs)], em)


def latency_s(net, batches, warmup: bool = True) -> float:
    """Mean wall-clock seconds per input over the given batches (a host-CPU proxy)."""
    batches = list(batches)
    if not batches:
        raise ContractError("latency_s needs at least one batch")
    if warmup:
        net.forward(batches[0], leaves=net.make_leaves(False))
    per_input = []
    for xb in batches:
        leaves = net.make_leaves(False)
        t0 = time.perf_counter()
        net.forward(xb, leaves=leaves)
        per_input.append((time.perf_counter() - t0) / len(xb))
    return float(np.mean(per_input))


def sig3(v: float) -> float:
    return float(f"{v:.3g}")


def deploy_ratio(perf: float, latency: float, energy: float, size: float) -> float:
    """perf / (latency * energy * size)."""
    if min(latency, energy, size) <= 0:
        raise ContractError(f"DeployRatio needs positive latency, energy and size; got {latency}, {energy}, {size}")
    if not 0.0 <= perf <= 1.0:
        raise ContractError(f"performance must lie in [0, 1], got {perf}")
    return perf / (latency * energy * size)


@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float


def confusion_matrix(preds, labels, k_classes: int) -> np.ndarray:
    cm = np.zeros((k_classes, k_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def classification_metrics(preds, labels, k_classes: int) -> ClassificationMetrics:
    """Accuracy and macro precision/recall/F1 (rows of the confusion matrix are true classes).

    A class with no predictions, no labels, or both contributes 0 to the
    corresponding macro mean.
    """
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ContractError(f"preds {preds.shape} and labels {labels.shape} differ in length")
    if preds.size == 0:
        raise ContractError("classification_metrics on empty input")
    cm = confusion_matrix(preds, labels, k_classes)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(k_classes), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(k_classes), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(k_classes), where=denom > 0)
    return ClassificationMetrics(float(tp.sum() / preds.size), float(precision.mean()),
                                 float(recall.mean()), float(f1.mean()))


@dataclass
class DeployMetrics:
    perf_acc: float
    perf_f1: float
    latency_s: float
    energy_mj: float
    size_mb: float
    dr_acc: float = 0.0
    dr_f1: float = 0.0

    def __post_init__(self):
        self.dr_acc = deploy_ratio(self.perf_acc, self.latency_s, self.energy_mj, self.size_mb)
        self.dr_f1 = deploy_ratio(self.perf_f1, self.latency_s, self.energy_mj, self.size_mb)
