"""Minibatch training loop shared by every training stage."""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .cat import commitment_loss, level_usage, reseed_dead_levels, total_loss
from .data import Split, batches
from .errors import StateError
from .network import Network
from .optim import AdamState, cosine_lr, optimizer_step

LOG_COLUMNS = ("stage", "epoch", "lr", "train_loss", "train_acc", "test_acc")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, **row):
        self.rows.append({k: row.get(k, "") for k in LOG_COLUMNS})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=LOG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def accuracy(net: Network, split: Split, neuron: str = "lif") -> float:
    if len(split) == 0:
        return 0.0
    return float((net.predict(split.x, neuron=neuron) == split.y).mean())


def check_cat_invariant(net: Network):
    for layer in net.layers:
        if layer.mode == "cat":
            n = np.unique(layer.effective()).size
            if n > layer.codebook.m:
                raise StateError(f"layer {layer.name}: {n} distinct effective weights exceed M={layer.codebook.m}")


def stream_seed(seed: int, stage: str, epoch: int) -> list:
    return [seed, zlib.crc32(stage.encode()), epoch]


def train(net: Network, train_split: Split, test_split: Split | None, *, epochs: int, lr: float,
          weight_decay: float = 0.0, batch_size: int = 64, seed: int = 0, stage: str = "train",
          log: TrainLog | None = None, neuron: str = "lif", beta_commit: float = 0.5,
          codebook_task_grad: bool = True, reseed_dead: bool = True, on_step=None) -> Network:
    """Train ``net`` in place with AdamW and per-epoch cosine annealing.

    CAT layers add beta_commit times their commitment loss; after every step
    each CAT layer is checked to hold at most M distinct effective weights,
    and levels unused for a whole epoch are reseeded.
    """
    log = log if log is not None else TrainLog()
    state = AdamState()
    no_decay = {n for n in net.param_names() if n.endswith(".levels")}
    for epoch in range(epochs):
        lr_e = cosine_lr(epoch, epochs, lr)
        rng = np.random.default_rng(stream_seed(seed, stage, epoch))
        cat_layers = [layer for layer in net.layers if layer.mode == "cat" and layer.codebook.trainable
                      and not layer.codebook.quantized]
        usage = {layer.name: np.zeros(layer.codebook.m, dtype=np.int64) for layer in cat_layers}
        loss_sum, correct, seen = 0.0, 0, 0
        for xb, yb in batches(train_split, batch_size, rng):
            res = net.forward(xb, neuron=neuron, task_grad_to_codebook=codebook_task_grad)
            loss = tn.softmax_cross_entropy(res.logits, yb)
            if res.commit_pairs and beta_commit > 0:
                commit = res.commit_pairs[0]
                commit = commitment_loss(*commit)
                for pair in res.commit_pairs[1:]:
                    commit = tn.add(commit, commitment_loss(*pair))
                loss = total_loss(loss, commit, beta_commit)
            loss.backward()
            grads = {n: leaf.grad for n, leaf in res.leaves.items() if leaf.requires_grad}
            params, state = optimizer_step(net.parameters(), grads, state, lr_e, weight_decay, no_decay=no_decay)
            net.set_parameters(params)
            for layer in net.layers:
                if layer.mode == "ternary":
                    layer.w_pos, layer.w_neg = max(layer.w_pos, 1e-6), max(layer.w_neg, 1e-6)
            for layer in cat_layers:
                usage[layer.name] += level_usage(layer.assignment(), layer.codebook.m)
            check_cat_invariant(net)
            loss_sum += loss.item() * len(yb)
            correct += int((np.argmax(res.logits.data, axis=1) == yb).sum())
            seen += len(yb)
            if on_step is not None:
                on_step(net)
        if reseed_dead:
            for layer in cat_layers:
                layer.codebook = reseed_dead_levels(layer.weight, layer.codebook, usage[layer.name])
        test_acc = accuracy(net, test_split, neuron) if test_split is not None else float("nan")
        log.add(stage=stage, epoch=epoch + 1, lr=lr_e, train_loss=loss_sum / max(seen, 1),
                train_acc=correct / max(seen, 1), test_acc=test_acc)
    return net
