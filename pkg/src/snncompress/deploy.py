"""Hardware profiles, constraint validation and LUT (codebook + index) export."""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

LUT_MAGIC = b"SNLT"
LUT_VERSION = 1


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    max_unique_states: int
    allowed_bits: tuple
    max_neurons: int
    max_synapses: int

    def __post_init__(self):
        if min(self.max_unique_states, self.max_neurons, self.max_synapses) <= 0 or not self.allowed_bits:
            raise ContractError(f"profile {self.name}: all bounds must be positive")


def parse_profiles(text: str) -> dict:
    """Catalog CSV: name, max_unique_states, allowed_bits (';'-separated), max_neurons, max_synapses."""
    out = {}
    rows = csv.DictReader(line for line in io.StringIO(text) if line.strip() and not line.startswith("#"))
    for row in rows:
        try:
            prof = HardwareProfile(
                row["name"].strip(),
                int(row["max_unique_states"]),
                tuple(int(b) for b in row["allowed_bits"].split(";")),
                int(row["max_neurons"]),
                int(row["max_synapses"]),
            )
        except (KeyError, ValueError, AttributeError) as exc:
            raise ContractError(f"bad profile record {row}: {exc}") from exc
        out[prof.name] = prof
    return out


def load_profiles(path=None) -> dict:
    if path is None:
        text = resources.files("snncompress").joinpath("profiles.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_profiles(text)


def get_profile(name: str, path=None) -> HardwareProfile:
    profiles = load_profiles(path)
    if name not in profiles:
        raise ContractError(f"unknown hardware profile {name!r} (known: {', '.join(sorted(profiles))})")
    return profiles[name]


def count_neurons(net) -> int:
    return int(sum(np.prod(s["out"]) for s in net.shapes()))


def count_synapses(net) -> int:
    """Physical connections (weight sharing is not available on target cores)."""
    return int(sum(s["macs"] for s in net.shapes()))


@dataclass
class ProfileReport:
    profile: str
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add(self, check, layer, measured, limit, passed):
        self.checks.append({"check": check, "layer": layer, "measured": measured, "limit": limit, "passed": bool(passed)})

    def table(self) -> str:
        lines = [f"profile {self.profile}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  [{'ok' if c['passed'] else 'FAIL':>4}] {c['check']:<14} {c['layer']:<8} "
                         f"measured={c['measured']} limit={c['limit']}")
        return "\n".join(lines)


def validate_profile(net, profile: HardwareProfile) -> ProfileReport:
    """Check unique weight states and bit-width per layer, then neuron/synapse budgets."""
    rep = ProfileReport(profile.name)
    for layer in net.layers:
        uniq = int(np.unique(layer.effective()).size)
        rep.add("unique_states", layer.name, uniq, profile.max_unique_states, uniq <= profile.max_unique_states)
        bits = layer.bits()
        rep.add("bitwidth", layer.name, bits, list(profile.allowed_bits), bits in profile.allowed_bits)
    n = count_neurons(net)
    rep.add("neurons", "model", n, profile.max_neurons, n <= profile.max_neurons)
    s = count_synapses(net)
    rep.add("synapses", "model", s, profile.max_synapses, s <= profile.max_synapses)
    return rep


# ---------------------------------------------------------------- LUT format
#
# All integers little-endian.
#   magic "SNLT" | u16 version | u32 manifest length | manifest JSON (utf-8) | u16 layer count
#   per layer:
#     u16 name length | name | u8 ndim | ndim x u32 shape
#     u8 level kind (0: integer levels times scale, 1: float64 levels)
#     u8 bit-width b | f64 scale s | u16 M | M x (i32 | f64) levels
#     u8 index bits | u32 packed byte count | packed indices (LSB-first bit order)


def index_bits(m: int) -> int:
    return max(1, math.ceil(math.log2(m))) if m > 1 else 1


def pack_indices(idx: np.ndarray, bits: int) -> bytes:
    idx = np.asarray(idx, dtype=np.uint64).reshape(-1)
    planes = ((idx[:, None] >> np.arange(bits, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(planes.reshape(-1), bitorder="little").tobytes()


def unpack_indices(data: bytes, bits: int, count: int) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: count * bits]
    planes = flat.reshape(count, bits).astype(np.int64)
    return (planes << np.arange(bits, dtype=np.int64)).sum(axis=1)


def _layer_record(layer, limit):
    """(kind, bitwidth, scale, levels, indices) describing a layer's weights losslessly."""
    eff = layer.effective()
    if layer.mode == "cat" and layer.codebook.quantized:
        cb = layer.codebook
        return 0, cb.bitwidth, float(cb.scale), cb.q_levels.astype(np.int64), layer.assignment() - 1
    levels, idx = np.unique(eff, return_inverse=True)
    return 1, layer.bits(), 1.0, levels, idx.reshape(eff.shape)


def export_lut(net, path, profile: HardwareProfile | None = None, max_levels: int | None = None) -> dict:
    """Write the per-layer codebook/index file; returns the manifest.

    Refuses (ContractError naming the layer) when a layer has more unique
    weight values than ``max_levels``, the profile's limit, or its own
    codebook size.
    """
    records = []
    for layer in net.layers:
        limit = max_levels or (profile.max_unique_states if profile else None)
        if limit is None:
            limit = layer.codebook.m if layer.mode == "cat" else 256
        uniq = int(np.unique(layer.effective()).size)
        if uniq > limit:
            raise ContractError(f"export refused: layer {layer.name} has {uniq} unique weights > {limit}")
        records.append((layer, _layer_record(layer, limit)))
    manifest = {
        "format": "snncompress-lut",
        "version": LUT_VERSION,
        "layers": [
            {"name": layer.name, "shape": list(layer.weight.shape), "bitwidth": int(rec[1]),
             "levels": int(len(rec[3])), "index_bits": index_bits(len(rec[3])),
             "level_kind": "int" if rec[0] == 0 else "float"}
            for layer, rec in records
        ],
        "provenance": list(net.provenance),
    }
    if profile is not None:
        rep = validate_profile(net, profile)
        manifest["profile"] = {"name": profile.name, "passed": rep.passed, "checks": rep.checks}
    body = io.BytesIO()
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    body.write(LUT_MAGIC + struct.pack("<HI", LUT_VERSION, len(mbytes)) + mbytes)
    body.write(struct.pack("<H", len(records)))
    for layer, (kind, b, s, levels, idx) in records:
        name = layer.name.encode()
        shape = layer.weight.shape
        body.write(struct.pack("<H", len(name)) + name)
        body.write(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
        body.write(struct.pack("<BBdH", kind, b, s, len(levels)))
        body.write(np.asarray(levels, dtype="<i4" if kind == 0 else "<f8").tobytes())
        ib = index_bits(len(levels))
        packed = pack_indices(idx, ib)
        body.write(struct.pack("<BI", ib, len(packed)) + packed)
    Path(path).write_bytes(body.getvalue())
    return manifest


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ParseError(f"unexpected end of file reading {n} bytes", self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_lut(path) -> tuple[dict, dict]:
    """Read a LUT file; returns (manifest, {layer name: effective weight array})."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != LUT_MAGIC:
        raise ParseError("not a LUT file (bad magic)", 0)
    version, mlen = r.unpack("<HI")
    if version != LUT_VERSION:
        raise ParseError(f"unsupported LUT version {version}", 4)
    manifest = json.loads(r.take(mlen).decode())
    (count,) = r.unpack("<H")
    weights = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        kind, b, s, m = r.unpack("<BBdH")
        if kind == 0:
            levels = s * np.frombuffer(r.take(4 * m), dtype="<i4").astype(np.float64)
        elif kind == 1:
            levels = np.frombuffer(r.take(8 * m), dtype="<f8").astype(np.float64)
        else:
            raise ParseError(f"unknown level kind {kind}", r.pos)
        ib, plen = r.unpack("<BI")
        idx = unpack_indices(r.take(plen), ib, int(np.prod(shape)))
        weights[name] = levels[idx].reshape(shape)
    return manifest, weights


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True)


def profile_dict(profile: HardwareProfile) -> dict:
    return asdict(profile)
