"""Clustered baseline: ANN pretrain, uniform QAT, k-means snapping, INT8 codebook, SNN transfer."""

from __future__ import annotations

import math
from dataclasses import replace

from ..cat import Codebook, quantize_codebook
from ..convert import to_qat
from ..network import Network
from ..training import TrainLog, train
from .kmeans import kmeans_1d


def cluster_weights(net: Network, m: int, seed: int = 0) -> Network:
    """Replace each layer's weights by the nearest of ``m`` k-means centroids (frozen codebook)."""
    for i, layer in enumerate(net.layers):
        w = layer.effective()
        res = kmeans_1d(w.reshape(-1), m, seed=seed + i)
        layer.weight = res.centroids[res.assignment].reshape(w.shape)
        layer.codebook = Codebook(res.centroids, trainable=False)
        layer.mode, layer.qat_bits = "cat", None
    return net


def int8_codebooks(net: Network) -> Network:
    for layer in net.layers:
        layer.codebook = replace(quantize_codebook(layer.codebook, 8, "resolution-preserving"), trainable=False)
    return net


def clustered_baseline_pipeline(cfg, train_split, test_split, log: TrainLog | None = None,
                                pretrained: Network | None = None, checkpoint=None) -> Network:
    """Run steps (i) to (v) and return the SNN carrying the clustered INT8 weights.

    (i) train the network with ReLU in place of LIF (skipped when ``pretrained``
    is given), (ii) QAT fine-tune at ``cluster.qat_bits``, (iii) k-means each
    layer into M centroids and snap, (iv) quantize the centroids to INT8 and
    fine-tune briefly, (v) hand the weights to the spiking forward pass.
    ``checkpoint(name, net)`` is called after each step when given.
    """
    from ..pipeline import build_from_config

    log = log if log is not None else TrainLog()
    seed, bs = cfg.run.seed, cfg.run.batch_size

    def ckpt(name, net):
        net.provenance.append(name)
        if checkpoint is not None:
            checkpoint(name, net)

    if pretrained is None:
        net = build_from_config(cfg)
        st = cfg.stage("ann")
        train(net, train_split, test_split, epochs=st.epochs, lr=st.lr, weight_decay=st.weight_decay,
              batch_size=bs, seed=seed, stage="cluster:ann", log=log, neuron="relu")
    else:
        net = pretrained.copy()
    ckpt("cluster:ann", net)

    st = cfg.stage("qat")
    to_qat(net, cfg.cluster.qat_bits)
    train(net, train_split, test_split, epochs=st.epochs, lr=st.lr, weight_decay=st.weight_decay,
          batch_size=bs, seed=seed, stage="cluster:qat", log=log, neuron="relu")
    ckpt("cluster:qat", net)

    cluster_weights(net, cfg.cat.m, seed)
    ckpt("cluster:kmeans", net)

    int8_codebooks(net)
    brief = max(1, math.ceil(cfg.cluster.snap_finetune_frac * st.epochs)) if st.epochs else 0
    train(net, train_split, test_split, epochs=brief, lr=st.lr, weight_decay=st.weight_decay,
          batch_size=bs, seed=seed, stage="cluster:int8", log=log, neuron="relu")
    ckpt("cluster:int8", net)

    ckpt("cluster:snn", net)
    return net
