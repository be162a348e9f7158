"""Dense tensors with tape-free reverse-mode autodiff.

Every op returns a new :class:`Tensor`. When grad tracking is enabled and at
least one operand requires a gradient, the result keeps links to its parents
and a closure mapping the output cotangent to parent cotangents. A
:class:`Graph` is materialised from a scalar loss by topological sort and
walked once in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from actoreg.core.errors import ContractError, DimensionError, NumericError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are cast to.

    Float32 is the working precision; float64 exists for finite-difference
    gradient checks.
    """
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")
    # make numpy defer to our reflected operators (ndarray - Tensor -> Tensor.__rsub__)
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        dtype = default_dtype()
        if arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.name = name

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

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    # division by zero is reported by check_finite, not as a numpy warning
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    # subgradient at 0 is 0
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    if not np.all(np.isfinite(out)):
        raise NumericError("exp: overflow")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    if np.any(ad <= 0):
        raise NumericError("log: non-positive input")
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is inside [lo, hi]."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _make(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,), "clip")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "minimum")
    pick_a = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _make(np.minimum(a.data, b.data), (a, b), bw, "minimum")


# ----------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            g @ bd.T if a.requires_grad else None,
            ad.T @ g if b.requires_grad else None,
        )

    return _make(ad @ bd, (a, b), bw, "matmul")


def linear(x, w, b=None, activation: str | None = None) -> Tensor:
    """Fused ``x @ w + b`` with ``b`` broadcast over rows, optionally followed by ReLU."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: cannot apply weight {w.shape} to input {x.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    parents: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias shape {b.shape} does not match {w.shape}")
        out += b.data
        parents = (x, w, b)
    if activation == "relu":
        mask = out > 0
        out = np.maximum(out, 0, out=out)
    elif activation is not None:
        raise ValueError(f"linear: unsupported activation {activation!r}")

    def bw(g):
        if activation is not None:
            g = g * mask
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if b.requires_grad else None)

    return _make(out, parents, bw, "linear" if activation is None else f"linear_{activation}")


# ----------------------------------------------------------------- reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    dtype = a.data.dtype

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((np.broadcast_to(g, shape) / dtype.type(n)).astype(dtype),)

    return _make(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), bw, "mean")


def var(a, axis=None, keepdims: bool = False) -> Tensor:
    """Biased (population) variance."""
    a = as_tensor(a)
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])
    centered = a.data - a.data.mean(axis=axis, keepdims=True)
    out = np.asarray((centered * centered).mean(axis=axis, keepdims=keepdims))
    dtype = a.data.dtype

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((2.0 / n) * g * centered).astype(dtype),

    return _make(out, (a,), bw, "var")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=axis, keepdims=True)
    out = shifted - np.log(total)
    soft = e / total

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw, "log_softmax")


def softmax_cross_entropy(logits, target: np.ndarray) -> Tensor:
    """Fused ``mean_i -sum_j target_ij * log_softmax(logits)_ij`` for (batch, classes) inputs."""
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape != np.shape(target):
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape} vs target {np.shape(target)}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(total)
    batch = logits.shape[0]
    dtype = logits.data.dtype
    out = np.asarray(-(target * logp).sum() / batch, dtype=dtype)

    def bw(g):
        # d/dlogits of -sum t*logp = softmax * sum(t) - t
        soft = e / total
        return ((g / batch) * (soft * target.sum(axis=1, keepdims=True) - target)).astype(dtype, copy=False),

    return _make(out, (logits,), bw, "softmax_cross_entropy")


def softmax_expectation(logits, values: np.ndarray) -> Tensor:
    """Fused ``softmax(logits) @ values`` per row, giving a (batch,) tensor."""
    logits = as_tensor(logits)
    values = np.asarray(values, dtype=logits.data.dtype)
    if logits.ndim != 2 or logits.shape[1] != values.shape[0]:
        raise DimensionError(f"softmax_expectation: logits {logits.shape} vs values {values.shape}")
    e = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    out = probs @ values

    def bw(g):
        return ((g[:, None] * probs) * (values[None, :] - out[:, None]),)

    return _make(out, (logits,), bw, "softmax_expectation")


def standardize(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Fused ``(x - mean) / sqrt(var + eps)`` along ``axis`` (biased variance)."""
    a = as_tensor(a)
    dtype = a.data.dtype
    inv_n = dtype.type(1.0 / a.shape[axis])
    centered = a.data - a.data.sum(axis=axis, keepdims=True) * inv_n
    inv_std = 1.0 / np.sqrt((centered * centered).sum(axis=axis, keepdims=True) * inv_n + eps)
    out = (centered * inv_std).astype(dtype, copy=False)

    def bw(g):
        g_mean = g.sum(axis=axis, keepdims=True) * inv_n
        gy_mean = (g * out).sum(axis=axis, keepdims=True) * inv_n
        return (inv_std * (g - g_mean - out * gy_mean),)

    return _make(out, (a,), bw, "standardize")


def affine(a, gain, bias) -> Tensor:
    """Fused per-column ``a * gain + bias`` for a (batch, width) input."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    if a.ndim != 2 or gain.shape != (a.shape[1],) or bias.shape != (a.shape[1],):
        raise DimensionError(f"affine: gain {gain.shape} / bias {bias.shape} do not match input {a.shape}")
    ad, gd = a.data, gain.data

    def bw(g):
        return (g * gd if a.requires_grad else None,
                (g * ad).sum(axis=0) if gain.requires_grad else None,
                g.sum(axis=0) if bias.requires_grad else None)

    return _make(ad * gd + bias.data, (a, gain, bias), bw, "affine")


# ----------------------------------------------------------------- shape ops


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, ts, bw, "concat")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.asarray(a.data[idx]), (a,), bw, "index")


# ----------------------------------------------------------------- graph


class Graph:
    """Nodes reachable from ``output``, in topological (forward) order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grads: dict[int, np.ndarray] = {}

    def backward(self) -> dict[int, np.ndarray]:
        out = self.output
        grads = {id(out): np.ones_like(out.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node.parents:
                del grads[id(node)]
        self.grads = grads
        return grads

    def first_nonfinite(self) -> Tensor | None:
        for node in self.nodes:
            if not np.all(np.isfinite(node.data)):
                return node
        return None


def backward(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` for each of ``params`` (zeros if unreachable)."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    params = list(params)
    if not loss.requires_grad:
        return [np.zeros_like(p.data) for p in params]
    graph = Graph(loss)
    grads = graph.backward()
    return [np.asarray(grads[id(p)], dtype=p.data.dtype) if id(p) in grads else np.zeros_like(p.data)
            for p in params]


def check_finite(loss: Tensor, where: str = "") -> None:
    """Raise :class:`NumericError` naming the first op that produced a non-finite value."""
    if np.all(np.isfinite(loss.data)):
        return
    culprit = Graph(loss).first_nonfinite()
    op = culprit.op if culprit is not None else loss.op
    suffix = f" ({where})" if where else ""
    raise NumericError(f"non-finite value produced by op '{op}'{suffix}")
