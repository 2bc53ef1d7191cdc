"""Structured channel pruning driven by per-channel saliency scores.

Criteria: Fisher Spike Contribution (loss-aware), mean spike activity,
weight magnitude, and an exact loss-delta oracle used to validate the others.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import tensor as tn
from .errors import ContractError, DimensionError, StateError
from .network import Network

CRITERIA = ("fsc", "sca", "mag", "oracle")


@dataclass
class ActivityRecord:
    """Spikes ``y`` of one layer (N x T x C x ...) and dL/dy from a per-sample loss."""

    y: np.ndarray
    delta: np.ndarray | None = None

    def __post_init__(self):
        if self.delta is not None and self.delta.shape != self.y.shape:
            raise DimensionError(f"delta shape {self.delta.shape} != spike shape {self.y.shape}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def channels(self) -> int:
        return self.y.shape[2]


@dataclass
class ChannelSaliency:
    layer_id: int
    scores: np.ndarray
    criterion: str
    calib_batches: int = 0


@dataclass
class PruneReport:
    ratio: float
    params_before: int
    params_after: int
    layers: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ratio": self.ratio, "params_before": self.params_before,
                "params_after": self.params_after, "layers": self.layers}

    def table(self) -> str:
        rows = [f"{'layer':<8}{'criterion':<10}{'channels':>9}{'kept':>6}{'removed':>9}  removed ids"]
        for entry in self.layers:
            rows.append(f"{entry['layer']:<8}{entry['criterion']:<10}{entry['channels']:>9}"
                        f"{len(entry['kept']):>6}{len(entry['removed']):>9}  {entry['removed']}")
        rows.append(f"parameters: {self.params_before} -> {self.params_after} (ratio {self.ratio})")
        return "\n".join(rows)


def _as_records(rec) -> list:
    return [rec] if isinstance(rec, ActivityRecord) else list(rec)


def _channel_sum(a: np.ndarray) -> np.ndarray:
    return a.sum(axis=tuple(i for i in range(a.ndim) if i != 2))


def fsc_scores(rec, layer_id: int = 0) -> ChannelSaliency:
    """S_c = (1/N) sum_{b,t,h,w} delta^2 y^2, pooled over all calibration batches.

    The Fisher proportionality constant is dropped; only the ranking matters.
    """
    recs = _as_records(rec)
    if not recs:
        raise ContractError("fsc_scores needs at least one activity record")
    total, n = 0.0, 0
    for r in recs:
        if r.delta is None:
            raise StateError("fsc_scores needs backpropagated gradients (delta missing)")
        total = total + _channel_sum(r.delta ** 2 * r.y ** 2)
        n += r.n
    return ChannelSaliency(layer_id, total / n, "fsc", len(recs))


def sca_scores(rec, layer_id: int = 0) -> ChannelSaliency:
    """Mean spike activity per channel over batch, time and space."""
    recs = _as_records(rec)
    total, count = 0.0, 0
    for r in recs:
        total = total + _channel_sum(r.y)
        count += r.y.size // r.channels
    return ChannelSaliency(layer_id, total / count, "sca", len(recs))


def magnitude_scores(layer_weights, layer_id: int = 0) -> ChannelSaliency:
    """L1 norm of each output-channel weight slice."""
    w = np.asarray(layer_weights, dtype=np.float64)
    return ChannelSaliency(layer_id, np.abs(w.reshape(w.shape[0], -1)).sum(axis=1), "mag")


def collect_records(net: Network, calib) -> list[list[ActivityRecord]]:
    """Forward/backward every calibration batch; one record list per hidden layer.

    The loss is summed over samples so each sample's delta does not depend on
    how the calibration set is batched.
    """
    per_layer = [[] for _ in net.hidden]
    for x, y in calib:
        # Grad-requiring weights make every spike tensor a graph node, so its grad is kept.
        res = net.forward(x, leaves=net.make_leaves(True))
        loss = tn.softmax_cross_entropy(res.logits, y, reduction="sum")
        loss.backward()
        for i, act in enumerate(res.activity):
            per_layer[i].append(ActivityRecord(np.array(act.data), np.array(act.grad)))
    return per_layer


def calibration_loss(net: Network, calib, gates=None) -> float:
    total, n = 0.0, 0
    for x, y in calib:
        res = net.forward(x, leaves=net.make_leaves(False), gates=gates)
        total += tn.softmax_cross_entropy(res.logits, y, reduction="sum").item()
        n += len(y)
    return total / n


def oracle_scores(net: Network, calib, layer_id: int) -> ChannelSaliency:
    """Exact loss increase when each output channel of ``layer_id`` is forced to zero."""
    calib = list(calib)
    base = calibration_loss(net, calib)
    c = net.hidden[layer_id].out_channels
    scores = np.zeros(c)
    for ch in range(c):
        mask = np.ones(c)
        mask[ch] = 0.0
        scores[ch] = calibration_loss(net, calib, gates={layer_id: mask}) - base
    return ChannelSaliency(layer_id, scores, "oracle", len(calib))


def compute_saliency(net: Network, criterion: str, calib) -> dict:
    """Saliency for every hidden layer under one criterion."""
    if criterion not in CRITERIA:
        raise ContractError(f"unknown pruning criterion {criterion!r}")
    calib = list(calib)
    if criterion == "mag":
        return {i: magnitude_scores(layer.effective(), i) for i, layer in enumerate(net.hidden)}
    if criterion == "oracle":
        return {i: oracle_scores(net, calib, i) for i in range(len(net.hidden))}
    recs = collect_records(net, calib)
    fn = fsc_scores if criterion == "fsc" else sca_scores
    return {i: fn(r, i) for i, r in enumerate(recs)}


def spearman(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(spearmanr(a, b).statistic)


def n_to_remove(ratio: float, channels: int) -> int:
    # Small slack so e.g. 0.29 * 100 is not floored to 28.
    return int(math.floor(ratio * channels + 1e-9))


def _shrink_next(next_layer, keep, prev_out_shape, prev_pooled_shape):
    w = next_layer.weight
    if next_layer.op == "conv":
        return w[:, keep]
    if len(prev_pooled_shape) == 3:
        c, h, wd = prev_pooled_shape
        return w.reshape(w.shape[0], c, h * wd)[:, keep].reshape(w.shape[0], -1)
    return w[:, keep]


def prune_channels(net: Network, saliency: dict, ratio: float) -> tuple[Network, PruneReport]:
    """Remove the floor(ratio * C) lowest-scoring output channels of each scored hidden layer.

    The layer's weights and the next layer's matching input slices are cut;
    ties go to the lower channel index first.  Codebooks are kept, and
    assignments follow the shrunk latents.
    """
    if not 0 <= ratio < 1:
        raise ContractError(f"prune ratio must lie in [0, 1), got {ratio}")
    out = net.copy()
    shapes = net.shapes()
    report = PruneReport(ratio, net.param_count(), 0)
    for i in sorted(saliency):
        sal = saliency[i]
        if not 0 <= i < len(net.hidden):
            raise ContractError(f"layer {i} is not a prunable hidden layer")
        layer = out.layers[i]
        c = layer.out_channels
        scores = np.asarray(sal.scores, dtype=np.float64)
        if scores.shape != (c,):
            raise StateError(f"layer {layer.name}: saliency has {scores.size} scores but the layer has {c} channels")
        k = n_to_remove(ratio, c)
        if k >= c:
            raise ContractError(f"layer {layer.name}: ratio {ratio} would remove all {c} channels")
        order = np.lexsort((np.arange(c), scores))
        removed = np.sort(order[:k])
        keep = np.sort(order[k:])
        if k:
            nxt = out.layers[i + 1]
            out_shape = shapes[i]["out"]
            pooled = (out_shape[0], out_shape[1] // 2, out_shape[2] // 2) if layer.pool else out_shape
            nxt.weight = _shrink_next(nxt, keep, out_shape, pooled)
            layer.weight = layer.weight[keep]
            shapes = out.shapes()
        report.layers.append({"layer": layer.name, "criterion": sal.criterion, "channels": c,
                              "kept": keep.tolist(), "removed": removed.tolist(),
                              "scores": [float(s) for s in scores]})
    out.shapes()
    report.params_after = out.param_count()
    return out, report


def channel_masks(report: PruneReport, net: Network) -> dict:
    """Gate arrays that zero exactly the channels a prune removed (for equivalence checks)."""
    masks = {}
    names = [layer.name for layer in net.hidden]
    for entry in report.layers:
        i = names.index(entry["layer"])
        m = np.ones(entry["channels"])
        m[entry["removed"]] = 0.0
        masks[i] = m
    return masks
