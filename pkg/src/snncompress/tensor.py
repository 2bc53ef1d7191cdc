"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the layer vocabulary the compression pipeline needs is provided: dense
and 2-D convolution, 2x2 average pooling, reshapes, a few elementwise ops,
sum/mean reductions and a fused softmax cross-entropy.  Broadcasting is not
supported: binary elementwise ops take an equal-shape tensor or a Python
scalar.

Every op builds its result through :func:`apply_op`, which stores the parents
and a backward closure.  :meth:`Tensor.backward` orders the graph with
:func:`build_tape` and walks it once in reverse, summing gradients at fan-out.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from numbers import Real
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Immutable float64 array with an optional gradient record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"non-finite values produced by '{op}'")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Backward | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``.

        Leaf gradients add up across calls; intermediate gradients are reset
        so they reflect this pass only.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        tape = build_tape(self)
        for node in tape:
            if node._parents:
                node.grad = None
        self.grad = grad.copy() if self.grad is None else self.grad + grad
        for node in reversed(tape):
            if node._backward is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(node.grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                parent.grad = np.array(pgrad, dtype=np.float64) if parent.grad is None else parent.grad + pgrad

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(data, parents: Sequence[Tensor], backward: Backward, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; record the graph edge only if needed."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of grad-requiring nodes reachable from ``root``.

    Every parent appears before its consumers.  Iterative so deep temporal
    unrolls do not hit the recursion limit.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data, op="detach")


# ---------------------------------------------------------------- elementwise


def _check_same(x: Tensor, y: Tensor, op: str):
    if x.shape != y.shape:
        raise DimensionError(f"{op}: shapes {x.shape} and {y.shape} differ (no broadcasting)")


def add(x: Tensor, y) -> Tensor:
    if isinstance(y, Real):
        return apply_op(x.data + float(y), (x,), lambda g: (g,), "add")
    _check_same(x, y, "add")
    return apply_op(x.data + y.data, (x, y), lambda g: (g, g), "add")


def sub(x: Tensor, y) -> Tensor:
    if isinstance(y, Real):
        return apply_op(x.data - float(y), (x,), lambda g: (g,), "sub")
    _check_same(x, y, "sub")
    return apply_op(x.data - y.data, (x, y), lambda g: (g, -g), "sub")


def mul(x: Tensor, y) -> Tensor:
    if isinstance(y, Real):
        return scale(x, y)
    _check_same(x, y, "mul")
    xd, yd = x.data, y.data
    return apply_op(xd * yd, (x, y), lambda g: (g * yd, g * xd), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ContractError(f"clamp: lo={lo} > hi={hi}")
    inside = (x.data >= lo) & (x.data <= hi)
    return apply_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return apply_op(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


# ---------------------------------------------------------------- reductions


def _norm_axes(x: Tensor, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(x.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for a in axes:
        if not -x.ndim <= a < x.ndim:
            raise DimensionError(f"axis {a} out of range for shape {x.shape}")
        out.append(a % x.ndim)
    return tuple(sorted(set(out)))


def sum(x: Tensor, axes=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    ax = _norm_axes(x, axes)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape),)

    return apply_op(x.data.sum(axis=ax), (x,), backward, "sum")


def mean(x: Tensor, axes=None) -> Tensor:
    ax = _norm_axes(x, axes)
    shape = x.shape
    count = int(np.prod([shape[a] for a in ax])) if ax else 1

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape) / count,)

    return apply_op(x.data.sum(axis=ax) / count, (x,), backward, "mean")


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return apply_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading axis."""
    return reshape(x, (x.shape[0], -1)) if x.ndim > 2 else x


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return apply_op(x.data.T, (x,), lambda g: (g.T,), "transpose")


def index(x: Tensor, i: int, axis: int) -> Tensor:
    """Select slice ``i`` along ``axis`` (the axis is dropped)."""
    axis = _norm_axes(x, axis)[0]
    if not 0 <= i < x.shape[axis]:
        raise DimensionError(f"index {i} out of range for axis {axis} of shape {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = i
        full[tuple(sl)] = g
        return (full,)

    return apply_op(np.take(x.data, i, axis=axis), (x,), backward, "index")


def stack(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ContractError("stack needs at least one tensor")
    for t in xs[1:]:
        _check_same(xs[0], t, "stack")
    n = len(xs)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return apply_op(np.stack([t.data for t in xs], axis=axis), tuple(xs), backward, "stack")


def channel_scale(x: Tensor, gate, axis: int) -> Tensor:
    """Multiply every slice of ``x`` along ``axis`` by the matching gate entry.

    ``gate`` may be a Tensor (differentiable) or a plain array (mask).
    """
    gate = as_tensor(gate)
    if gate.shape != (x.shape[axis],):
        raise DimensionError(f"gate shape {gate.shape} does not match axis {axis} of {x.shape}")
    bshape = [1] * x.ndim
    bshape[axis] = -1
    gb = gate.data.reshape(bshape)
    other = tuple(a for a in range(x.ndim) if a != axis)
    xd = x.data

    def backward(g):
        return g * gb, (g * xd).sum(axis=other)

    return apply_op(xd * gb, (x, gate), backward, "channel_scale")


def gather(table: Tensor, idx: np.ndarray) -> Tensor:
    """Read ``table[idx]`` for a 1-D table; backward scatter-adds into the table."""
    if table.ndim != 1:
        raise DimensionError(f"gather expects a 1-D table, got {table.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    n = table.shape[0]

    def backward(g):
        return (np.bincount(idx.reshape(-1), weights=g.reshape(-1), minlength=n),)

    return apply_op(table.data[idx], (table,), backward, "gather")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return apply_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def dense(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` with ``w`` laid out as (out_features, in_features)."""
    return matmul(flatten(x), transpose(w))


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of N x C x H x W input with C_out x C x kh x kw weights (im2col)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    if stride < 1 or pad < 0:
        raise ContractError(f"conv2d: stride must be >= 1 and pad >= 0, got {stride}, {pad}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {ci} ({x.shape} vs {w.shape})")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(wd, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: non-positive output extent {ho}x{wo} for input {x.shape}, kernel {w.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(co, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    xp_shape = xp.shape

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp
        return dx, dw

    return apply_op(out, (x, w), backward, "conv2d")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise DimensionError(f"avg_pool2d: {k}x{k} window does not fit input {x.shape}")
    crop = x.data[:, :, : ho * k, : wo * k]
    out = crop.reshape(n, c, ho, k, wo, k).mean(axis=(3, 5))
    shape = x.shape

    def backward(g):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        full = np.zeros(shape)
        full[:, :, : ho * k, : wo * k] = up
        return (full,)

    return apply_op(out, (x,), backward, "avg_pool2d")


# ---------------------------------------------------------------- loss


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Cross-entropy of integer ``labels`` under softmax(``logits``); ``reduction`` is 'mean' or 'sum'."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross-entropy: logits {logits.shape} vs labels {labels.shape}")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")
    n = logits.shape[0]
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    total = -logp[rows, labels].sum()
    denom = n if reduction == "mean" else 1

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / denom),)

    return apply_op(total / denom, (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference gradient comparison."""

    max_rel_error: float
    passed: bool
    rtol: float
    checked: int
    worst: tuple = ()
    details: list = field(default_factory=list, repr=False)


def grad_check(f, x, eps: float = 1e-5, rtol: float = 1e-3, probes: int | None = None,
               seed: int = 0, atol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*xs)`` against central differences.

    ``x`` is a Tensor or a sequence of Tensors.  With ``probes`` set, only that
    many randomly chosen coordinates per tensor are differenced.  Relative
    error per coordinate is ``|a - n| / (max(|a|, |n|) + atol)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    leaves = [Tensor(t.data, requires_grad=True) for t in xs]
    out = f(*leaves)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)
    worst, worst_at, details, checked = 0.0, (), [], 0
    for ti, leaf in enumerate(leaves):
        analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad
        flat_size = leaf.size
        coords = np.arange(flat_size)
        if probes is not None and probes < flat_size:
            coords = np.sort(rng.choice(flat_size, size=probes, replace=False))
        for ci in coords:
            vals = []
            for sign in (1.0, -1.0):
                pert = leaf.data.copy().reshape(-1)
                pert[ci] += sign * eps
                args = [Tensor(pert.reshape(leaf.shape)) if j == ti else Tensor(t.data) for j, t in enumerate(leaves)]
                vals.append(f(*args).item())
            num = (vals[0] - vals[1]) / (2 * eps)
            ana = float(analytic.reshape(-1)[ci])
            rel = abs(ana - num) / (max(abs(ana), abs(num)) + atol)
            details.append((ti, int(ci), ana, num, rel))
            checked += 1
            if rel > worst:
                worst, worst_at = rel, (ti, int(ci))
    return GradCheckReport(worst, worst <= rtol, rtol, checked, worst_at, details)
