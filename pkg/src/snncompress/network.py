"""Layer containers and the spiking / non-spiking forward passes."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .baselines.quant import TernaryLayer, ternary_forward, uniform_fake_quant, uniform_grid
from .cat import CatLayer, Codebook, assign, effective_weight, reconstruct_quantized
from .errors import ContractError, DimensionError
from .snn import LifConfig, SynapticBlock, encode_replicate, unroll_network
from .tensor import Tensor

MODES = ("fp", "qat", "cat", "ternary")


@dataclass
class WeightLayer:
    """One conv or dense layer together with its weight representation.

    ``mode`` decides how the stored latent ``weight`` becomes the effective
    weight: as is (fp), through a uniform fake-quantizer (qat), snapped to a
    codebook (cat), or ternarized (ternary).
    """

    name: str
    op: str
    weight: np.ndarray
    stride: int = 1
    pad: int = 0
    pool: bool = False
    spiking: bool = True
    mode: str = "fp"
    codebook: Codebook | None = None
    qat_bits: int | None = None
    w_pos: float | None = None
    w_neg: float | None = None
    threshold_frac: float | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.op not in ("conv", "dense"):
            raise ContractError(f"layer op must be 'conv' or 'dense', got {self.op!r}")
        if self.mode not in MODES:
            raise ContractError(f"unknown weight mode {self.mode!r}")
        if self.mode == "cat" and self.codebook is None:
            raise ContractError(f"layer {self.name}: cat mode needs a codebook")
        if self.mode == "ternary" and None in (self.w_pos, self.w_neg, self.threshold_frac):
            raise ContractError(f"layer {self.name}: ternary mode needs w_pos, w_neg and threshold_frac")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def param_names(self) -> list[str]:
        names = [f"{self.name}.weight"]
        if self.mode == "cat" and self.codebook.trainable and not self.codebook.quantized:
            names.append(f"{self.name}.levels")
        if self.mode == "ternary":
            names += [f"{self.name}.w_pos", f"{self.name}.w_neg"]
        return names

    def get_param(self, name: str) -> np.ndarray:
        field_name = name.rsplit(".", 1)[1]
        if field_name == "weight":
            return self.weight
        if field_name == "levels":
            return self.codebook.levels
        return np.asarray(getattr(self, field_name), dtype=np.float64)

    def set_param(self, name: str, value: np.ndarray):
        field_name = name.rsplit(".", 1)[1]
        if field_name == "weight":
            self.weight = np.asarray(value, dtype=np.float64)
        elif field_name == "levels":
            self.codebook.levels = np.asarray(value, dtype=np.float64)
        else:
            setattr(self, field_name, float(value))

    def assignment(self) -> np.ndarray | None:
        if self.mode != "cat":
            return None
        if self.codebook.quantized:
            return reconstruct_quantized(self.weight, self.codebook)[1]
        return assign(self.weight, self.codebook)[0]

    def effective(self) -> np.ndarray:
        """Effective weight values as a plain array."""
        if self.mode == "fp":
            return self.weight.copy()
        if self.mode == "qat":
            return uniform_grid(self.weight, self.qat_bits)[0]
        if self.mode == "cat":
            return CatLayer(self.weight, self.codebook).effective()
        return TernaryLayer(self.weight, self.w_pos, self.w_neg, self.threshold_frac).forward().numpy()

    def build(self, leaves: dict, task_grad_to_codebook: bool = True):
        """Effective weight Tensor for a forward pass, plus the commitment pair for CAT layers."""
        latent = leaves[f"{self.name}.weight"]
        if self.mode == "fp":
            return latent, None
        if self.mode == "qat":
            return uniform_fake_quant(latent, self.qat_bits), None
        if self.mode == "ternary":
            return ternary_forward(latent, leaves[f"{self.name}.w_pos"], leaves[f"{self.name}.w_neg"], self.threshold_frac), None
        if self.codebook.quantized:
            return effective_weight(latent, Tensor(reconstruct_quantized(latent, self.codebook)[0])), None
        levels = leaves.get(f"{self.name}.levels")
        if levels is None:
            return effective_weight(latent, Tensor(assign(latent, self.codebook)[1])), None
        w_eff, w_q = CatLayer(latent.data, self.codebook).build(latent, levels, task_grad_to_codebook)
        return w_eff, (w_q, latent)

    def bits(self) -> int:
        """Nominal storage precision of one weight on the target."""
        if self.mode == "qat":
            return self.qat_bits
        if self.mode == "ternary":
            return 2
        if self.mode == "cat" and self.codebook.quantized:
            return self.codebook.bitwidth
        return 32


@dataclass
class ForwardResult:
    logits: Tensor
    leaves: dict
    activity: list = field(default_factory=list)
    commit_pairs: list = field(default_factory=list)


@dataclass
class Network:
    input_shape: tuple
    layers: list
    lif: LifConfig = field(default_factory=LifConfig)
    provenance: list = field(default_factory=list)
    config_hash: str = ""

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if not self.layers:
            raise ContractError("a network needs at least a classifier head")
        if self.layers[-1].spiking:
            raise ContractError("the last layer must be a non-spiking head")

    @property
    def hidden(self) -> list:
        return self.layers[:-1]

    @property
    def head(self) -> WeightLayer:
        return self.layers[-1]

    @property
    def n_classes(self) -> int:
        return self.head.out_channels

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def param_count(self) -> int:
        """Number of synaptic weights (codebook levels and scales excluded)."""
        return int(sum(layer.weight.size for layer in self.layers))

    def param_names(self) -> list[str]:
        return [n for layer in self.layers for n in layer.param_names()]

    def _layer_for(self, name: str) -> WeightLayer:
        prefix = name.rsplit(".", 1)[0]
        for layer in self.layers:
            if layer.name == prefix:
                return layer
        raise KeyError(name)

    def parameters(self) -> dict:
        return {n: self._layer_for(n).get_param(n) for n in self.param_names()}

    def set_parameters(self, params: dict):
        for name, value in params.items():
            self._layer_for(name).set_param(name, value)

    def shapes(self) -> list[dict]:
        """Per layer: input shape seen by the synapse and output shape (one sample, one step)."""
        out = []
        shape = self.input_shape
        for layer in self.layers:
            if layer.op == "conv":
                if len(shape) != 3:
                    raise DimensionError(f"layer {layer.name}: conv after a flattened input")
                co, ci, kh, kw = layer.weight.shape
                if ci != shape[0]:
                    raise DimensionError(f"layer {layer.name}: expects {ci} input channels, gets {shape[0]}")
                ho = tn.conv_output_size(shape[1], kh, layer.stride, layer.pad)
                wo = tn.conv_output_size(shape[2], kw, layer.stride, layer.pad)
                o = (co, ho, wo)
                macs = co * ho * wo * ci * kh * kw
            else:
                fan_in = int(np.prod(shape))
                if layer.weight.shape[1] != fan_in:
                    raise DimensionError(f"layer {layer.name}: expects {layer.weight.shape[1]} inputs, gets {fan_in}")
                o = (layer.weight.shape[0],)
                macs = layer.weight.size
            out.append({"name": layer.name, "in": shape, "out": o, "macs": macs})
            shape = o
            if layer.pool:
                shape = (o[0], o[1] // 2, o[2] // 2)
        return out

    def make_leaves(self, requires_grad: bool = True) -> dict:
        return {n: Tensor(v, requires_grad=requires_grad) for n, v in self.parameters().items()}

    def forward(self, x, leaves: dict | None = None, gates=None, neuron: str = "lif",
                lif: LifConfig | None = None, task_grad_to_codebook: bool = True) -> ForwardResult:
        """Run a batch ``x`` (N x C x H x W) through the network.

        ``gates`` optionally maps hidden-layer index to a per-channel gate
        (Tensor for gradients, array for masking) applied to that layer's
        output.  ``neuron='relu'`` runs the same topology as a plain ANN.
        """
        lif = lif or self.lif
        x = tn.as_tensor(x)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        leaves = self.make_leaves() if leaves is None else leaves
        gates = gates or {}
        blocks, pairs = [], []
        for i, layer in enumerate(self.layers):
            w, pair = layer.build(leaves, task_grad_to_codebook)
            if pair is not None:
                pairs.append(pair)
            blocks.append(SynapticBlock(layer.op, w, layer.stride, layer.pad, layer.pool, layer.spiking, gates.get(i)))
        if neuron == "lif":
            res = unroll_network(blocks, encode_replicate(x, lif.t_steps), lif)
            return ForwardResult(res.logits, leaves, res.activity, pairs)
        if neuron != "relu":
            raise ContractError(f"neuron must be 'lif' or 'relu', got {neuron!r}")
        h = x
        activity = []
        for block in blocks[:-1]:
            h = tn.conv2d(h, block.weight, block.stride, block.pad) if block.op == "conv" else tn.dense(h, block.weight)
            h = tn.relu(h)
            if block.gate is not None:
                h = tn.channel_scale(h, block.gate, axis=1)
            activity.append(h)
            if block.pool:
                h = tn.avg_pool2d(h, 2)
        return ForwardResult(tn.dense(h, blocks[-1].weight), leaves, activity, pairs)

    def predict(self, x, batch_size: int = 256, neuron: str = "lif") -> np.ndarray:
        preds = []
        for start in range(0, len(x), batch_size):
            res = self.forward(x[start:start + batch_size], leaves=self.make_leaves(False), neuron=neuron)
            preds.append(np.argmax(res.logits.data, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def build_network(input_shape, blocks, n_classes: int, lif: LifConfig | None = None, kernel: int = 3,
                  pad: int = 1, pool: bool = True, seed: int = 0, init_gain: float = 2.0) -> Network:
    """Fresh network from a block list such as ``[("conv", 16), ("conv", 32)]``.

    Hidden blocks are followed by LIF (and 2x2 pooling for conv blocks when
    ``pool``); a dense head maps to ``n_classes``.  No biases anywhere.
    Weights are drawn N(0, init_gain / fan_in).
    """
    rng = np.random.default_rng(seed)
    c, h, w = (int(v) for v in input_shape)
    shape = (c, h, w)
    layers = []
    for i, (op, width) in enumerate(blocks):
        if op == "conv":
            if len(shape) != 3:
                raise ContractError("conv blocks must come before dense blocks")
            fan_in = shape[0] * kernel * kernel
            weight = rng.normal(0.0, np.sqrt(init_gain / fan_in), size=(width, shape[0], kernel, kernel))
            ho, wo = tn.conv_output_size(shape[1], kernel, 1, pad), tn.conv_output_size(shape[2], kernel, 1, pad)
            do_pool = pool and ho >= 2 and wo >= 2
            layers.append(WeightLayer(f"l{i}", "conv", weight, 1, pad, do_pool, True))
            shape = (width, ho // 2, wo // 2) if do_pool else (width, ho, wo)
        elif op == "dense":
            fan_in = int(np.prod(shape))
            weight = rng.normal(0.0, np.sqrt(init_gain / fan_in), size=(width, fan_in))
            layers.append(WeightLayer(f"l{i}", "dense", weight, spiking=True))
            shape = (width,)
        else:
            raise ContractError(f"unknown block kind {op!r}")
    fan_in = int(np.prod(shape))
    head = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(n_classes, fan_in))
    layers.append(WeightLayer("head", "dense", head, spiking=False))
    return Network(input_shape, layers, lif or LifConfig())
