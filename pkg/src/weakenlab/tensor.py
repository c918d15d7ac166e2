"""Reverse-mode automatic differentiation over float64 numpy arrays.

Graphs are built on the fly (define-by-run). Every op returns a new
:class:`Tensor` that remembers its parents and a closure propagating the
upstream gradient to them. :func:`backward` orders the graph reachable from a
scalar loss into a :class:`Tape`, runs the closures once each in reverse, and
then drops the graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor", "Tape", "tensor", "add", "sub", "mul", "scalar_mul", "matmul", "sum", "mean",
    "reshape", "flatten", "relu", "max_pool2d", "conv2d", "log_softmax", "backward",
    "build_tape", "grad_check",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self):
        return sum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    # Only the bias-add pattern: one operand already has the result shape.
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        shape = None
    if shape is None or shape not in (a.shape, b.shape):
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are not compatible")
    return shape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), _bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), _bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (used for masks and soft-label weighting)."""
    _broadcast_shape(a, b, "mul")

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _bw, "mul")


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    if not math.isfinite(c):
        raise ValueError(f"scalar_mul: factor must be finite, got {c}")

    def _bw(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), _bw, "scalar_mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), _bw, "matmul")


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.array(x.data.sum()), (x,), _bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def _bw(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    return _make(np.array(x.data.mean()), (x,), _bw, "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def _bw(g):
        _accumulate(x, g.reshape(original))

    return _make(x.data.reshape(tuple(shape)), (x,), _bw, "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(x, (x.shape[0], -1))


def relu(x: Tensor) -> Tensor:
    # Subgradient at exactly zero is zero.
    mask = x.data > 0

    def _bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), _bw, "relu")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling over an ``[N, C, H, W]`` tensor.

    Ties route the gradient to the first maximal element in row-major window
    order, so the backward pass is an exact subgradient.
    """
    if x.ndim != 4:
        raise ValueError(f"max_pool2d: expected [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ValueError(f"max_pool2d: spatial size {h}x{w} is not divisible by {size}")
    ho, wo = h // size, w // size
    windows = (x.data.reshape(n, c, ho, size, wo, size)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho, wo, size * size))
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = (gw.reshape(n, c, ho, wo, size, size)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, h, w))
        _accumulate(x, gx)

    return _make(out, (x,), _bw, "max_pool2d")


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``[N, C, H, W]`` input with ``[F, C, kh, kw]`` filters."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d: kernel has {kc} input channels, input has {c}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} or padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # [N, C, Ho, Wo, kh, kw] view; no copy until tensordot.
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def _bw(g):
        if kernel.requires_grad:
            _accumulate(kernel, np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0]))
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
            _accumulate(x, gxp[:, :, padding:padding + h, padding:padding + w])

    return _make(np.ascontiguousarray(out), (x, kernel), _bw, "conv2d")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _bw(g):
        _accumulate(x, g - probs * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), _bw, "log_softmax")


@dataclass
class Tape:
    """Topologically ordered nodes reachable from a loss; inputs precede outputs."""

    nodes: list[Tensor] = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def build_tape(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    # Iterative post-order; deep CNN graphs would blow the recursion limit.
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return Tape(order)


def backward(loss: Tensor):
    """Populate ``grad`` on every ``requires_grad`` leaf feeding ``loss``.

    Leaf gradients accumulate across calls; the graph is released afterwards.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    tape = build_tape(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in tape.nodes:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor | np.ndarray, step: float = 1e-5,
               floor: float = 1e-8) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    The error per element is ``|a - n| / max(floor, |a| + |n|)``. Central
    differences carry rounding noise near ``eps * |f| / step`` (about 1e-11
    for an O(1) loss), so entries far below that scale are judged by
    ``floor`` rather than by their own size.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    backward(f(probe))
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(Tensor(base)).item()
        flat[i] = orig - step
        lo = f(Tensor(base)).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2 * step)

    denom = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
