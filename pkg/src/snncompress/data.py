"""Datasets: seeded synthetic template patterns and IDX image files."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


@dataclass
class DataSpec:
    kind: str = "synthetic"
    classes: int = 3
    channels: int = 3
    height: int = 8
    width: int = 8
    noise: float = 0.7
    train_per_class: int = 200
    test_per_class: int = 100
    idx_images: str = ""
    idx_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    test_fraction: float = 0.2


def synthetic_patterns(spec: DataSpec, seed: int) -> tuple[Split, Split]:
    """K fixed random templates in [0, 1]; samples are clamp(template + N(0, noise^2), 0, 1)."""
    rng = np.random.default_rng(seed)
    shape = (spec.channels, spec.height, spec.width)
    templates = rng.random((spec.classes,) + shape)

    def draw(per_class, stream):
        r = np.random.default_rng([seed, stream])
        y = np.repeat(np.arange(spec.classes), per_class)
        x = templates[y] + spec.noise * r.standard_normal((y.size,) + shape)
        order = r.permutation(y.size)
        return Split(np.clip(x, 0.0, 1.0)[order], y[order])

    return draw(spec.train_per_class, 1), draw(spec.test_per_class, 2)


def read_idx(path) -> np.ndarray:
    """Parse a big-endian IDX file (magic 0x0000TTDD) into an ndarray."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ParseError("IDX file shorter than its magic number", 0)
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"bad IDX magic {raw[:4].hex()}: first two bytes must be zero", 0)
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise ParseError(f"unknown IDX element type 0x{raw[2]:02x}", 2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"truncated IDX header: need {ndim} dimension words", 4)
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims)) if ndim else 1
    need = header + count * dtype.itemsize
    if len(raw) < need:
        raise ParseError(f"IDX payload truncated: expected {need} bytes, found {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray):
    """Write an unsigned-byte IDX file (used for fixtures and exports)."""
    arr = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def _idx_split(images, labels) -> Split:
    x = read_idx(images).astype(np.float64)
    y = read_idx(labels).astype(np.int64)
    if x.ndim == 3:
        x = x[:, None]
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"{images} has {x.shape[0]} images but {labels} has {y.shape[0]} labels")
    if x.max(initial=0) > 1.0:
        x = x / 255.0
    return Split(x, y)


def make_dataset(spec: DataSpec, seed: int) -> tuple[Split, Split]:
    if spec.kind == "synthetic":
        return synthetic_patterns(spec, seed)
    if spec.kind != "idx":
        raise ContractError(f"unknown dataset kind {spec.kind!r}")
    train = _idx_split(spec.idx_images, spec.idx_labels)
    if spec.idx_test_images:
        return train, _idx_split(spec.idx_test_images, spec.idx_test_labels)
    order = np.random.default_rng(seed).permutation(len(train))
    n_test = int(round(spec.test_fraction * len(train)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    return Split(train.x[train_idx], train.y[train_idx]), Split(train.x[test_idx], train.y[test_idx])


def batches(split: Split, batch_size: int, rng: np.random.Generator | None = None):
    """Yield (x, y) minibatches, shuffled when ``rng`` is given."""
    n = len(split)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield split.x[idx], split.y[idx]
