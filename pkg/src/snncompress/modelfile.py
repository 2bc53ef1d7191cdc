"""Binary model container.

Layout (little-endian)::

    magic "SNNC" | u16 version | u32 section count
    section: u16 name length | name | u8 kind (0 json, 1 float64, 2 int64)
             | u8 ndim | ndim x u32 shape | u64 payload length | payload

The ``meta`` JSON section carries architecture, neuron settings, per-layer
payload kinds, stage provenance and the config hash.  Array sections are
named ``<layer>.<field>``.  Serialization is canonical (sorted JSON keys,
fixed section order) so load followed by save reproduces the bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .cat import Codebook
from .errors import ParseError
from .network import Network, WeightLayer
from .snn import LifConfig

MAGIC = b"SNNC"
VERSION = 1
_KIND_JSON, _KIND_F64, _KIND_I64 = 0, 1, 2


def _layer_meta(layer: WeightLayer) -> dict:
    meta = {"name": layer.name, "op": layer.op, "stride": layer.stride, "pad": layer.pad,
            "pool": layer.pool, "spiking": layer.spiking, "mode": layer.mode}
    if layer.mode == "qat":
        meta["qat_bits"] = layer.qat_bits
    if layer.mode == "ternary":
        meta.update(w_pos=layer.w_pos, w_neg=layer.w_neg, threshold_frac=layer.threshold_frac)
    if layer.codebook is not None:
        cb = layer.codebook
        meta["codebook"] = {"bitwidth": cb.bitwidth, "scale": cb.scale, "mode": cb.mode,
                            "trainable": cb.trainable, "m": cb.m}
    return meta


def to_bytes(net: Network) -> bytes:
    meta = {
        "input_shape": list(net.input_shape),
        "lif": {"beta": net.lif.beta, "u_thr": net.lif.u_thr, "t_steps": net.lif.t_steps,
                "surrogate_alpha": net.lif.surrogate_alpha, "readout": net.lif.readout},
        "provenance": list(net.provenance),
        "config_hash": net.config_hash,
        "layers": [_layer_meta(layer) for layer in net.layers],
    }
    sections = [("meta", _KIND_JSON, json.dumps(meta, sort_keys=True).encode(), ())]
    for layer in net.layers:
        sections.append((f"{layer.name}.weight", _KIND_F64, layer.weight, layer.weight.shape))
        if layer.codebook is not None:
            cb = layer.codebook
            sections.append((f"{layer.name}.levels", _KIND_F64, cb.levels, cb.levels.shape))
            if cb.q_levels is not None:
                sections.append((f"{layer.name}.q_levels", _KIND_I64, cb.q_levels, cb.q_levels.shape))
            k = layer.assignment()
            sections.append((f"{layer.name}.assignment", _KIND_I64, k, k.shape))
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<HI", VERSION, len(sections)))
    for name, kind, payload, shape in sections:
        if kind == _KIND_F64:
            payload = np.ascontiguousarray(payload, dtype="<f8").tobytes()
        elif kind == _KIND_I64:
            payload = np.ascontiguousarray(payload, dtype="<i8").tobytes()
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack(f"<BB{len(shape)}I", kind, len(shape), *shape))
        buf.write(struct.pack("<Q", len(payload)) + payload)
    return buf.getvalue()


def save_model(net: Network, path) -> bytes:
    data = to_bytes(net)
    Path(path).write_bytes(data)
    return data


def from_bytes(raw: bytes) -> Network:
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise ParseError(f"model file truncated (wanted {n} bytes)", pos)
        out = raw[pos:pos + n]
        pos += n
        return out

    if take(4) != MAGIC:
        raise ParseError("not a model file (bad magic)", 0)
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise ParseError(f"unsupported model file version {version}", 4)
    meta, arrays = None, {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        kind, ndim = struct.unpack("<BB", take(2))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (plen,) = struct.unpack("<Q", take(8))
        payload = take(plen)
        if kind == _KIND_JSON:
            meta = json.loads(payload.decode())
        elif kind in (_KIND_F64, _KIND_I64):
            dtype = "<f8" if kind == _KIND_F64 else "<i8"
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype[1:])
        else:
            raise ParseError(f"unknown section kind {kind} in {name!r}", pos)
    if meta is None:
        raise ParseError("model file has no meta section", pos)
    layers = []
    for lm in meta["layers"]:
        name = lm["name"]
        codebook = None
        if "codebook" in lm:
            c = lm["codebook"]
            codebook = Codebook(arrays[f"{name}.levels"], c["bitwidth"], c["scale"],
                                arrays.get(f"{name}.q_levels"), c["mode"], c["trainable"])
        layers.append(WeightLayer(name, lm["op"], arrays[f"{name}.weight"], lm["stride"], lm["pad"], lm["pool"],
                                  lm["spiking"], lm["mode"], codebook, lm.get("qat_bits"), lm.get("w_pos"),
                                  lm.get("w_neg"), lm.get("threshold_frac")))
    lif = LifConfig(**meta["lif"])
    return Network(tuple(meta["input_shape"]), layers, lif, list(meta["provenance"]), meta["config_hash"])


def load_model(path) -> Network:
    return from_bytes(Path(path).read_bytes())
