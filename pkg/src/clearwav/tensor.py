"""Dense tensors with reverse-mode differentiation on top of numpy.

The tape is dynamic and micrograd-style: every op closes over its inputs
and knows how to push the output gradient back to them.  Training runs in
float32; verification (finite differences) runs the same graph in float64.
Tensors are treated as immutable once created; gradients accumulate into
``.grad`` during ``backward`` and are zeroed explicitly, never implicitly.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Parameter",
    "no_grad",
    "concat",
    "where",
    "gather",
    "scatter_add",
    "matmul",
    "conv1d",
    "gelu",
    "softmax",
    "log_softmax",
    "logsumexp",
    "logaddexp",
    "layer_norm",
    "l2_norm",
    "scale_grad",
    "straight_through",
    "xlogx",
    "assert_finite",
]

_FLOAT_DTYPES = (np.float32, np.float64)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (the adjoint of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """Same values, cut from the tape."""
        return Tensor(self.data)

    # -- graph machinery -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse pass from a scalar.  Accumulates into existing grads."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        # Iterative topological sort; CTC graphs are deep enough to overflow
        # the recursion limit.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if isinstance(self, Parameter) else None

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data + other.data, (self, other))
        if out._parents:
            def bwd(g):
                self._accumulate(g)
                other._accumulate(g)
            out._backward = bwd
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data * other.data, (self, other))
        if out._parents:
            def bwd(g):
                self._accumulate(g * other.data)
                other._accumulate(g * self.data)
            out._backward = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data - other.data, (self, other))
        if out._parents:
            def bwd(g):
                self._accumulate(g)
                other._accumulate(-g)
            out._backward = bwd
        return out

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        out = _node(self.data / other.data, (self, other))
        if out._parents:
            def bwd(g):
                self._accumulate(g / other.data)
                other._accumulate(-g * self.data / (other.data * other.data))
            out._backward = bwd
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = _node(self.data ** p, (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * p * self.data ** (p - 1))
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        out = _node(self.data[key], (self,))
        if out._parents:
            def bwd(g):
                dx = np.zeros_like(self.data)
                np.add.at(dx, key, g)
                self._accumulate(dx)
            out._backward = bwd
        return out

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g.reshape(self.data.shape))
        return out

    def transpose(self, *axes):
        axes = axes or None
        out = _node(self.data.transpose(*axes) if axes else self.data.T, (self,))
        if out._parents:
            inv = np.argsort(axes) if axes else None
            out._backward = lambda g: self._accumulate(
                g.transpose(inv) if inv is not None else g.T)
        return out

    def swapaxes(self, a, b):
        out = _node(self.data.swapaxes(a, b), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g.swapaxes(a, b))
        return out

    # -- reductions & pointwise ------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(
                _expand_reduced(g, self.data.shape, axis, keepdims))
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else _axis_size(self.data.shape, axis)
        out = _node(self.data.mean(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(
                _expand_reduced(g, self.data.shape, axis, keepdims) / n)
        return out

    def exp(self):
        out = _node(np.exp(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * out.data)
        return out

    def log(self):
        out = _node(np.log(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def sqrt(self):
        out = _node(np.sqrt(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g / (2.0 * out.data))
        return out

    def tanh(self):
        out = _node(np.tanh(self.data), (self,))
        if out._parents:
            out._backward = lambda g: self._accumulate(g * (1.0 - out.data * out.data))
        return out


class Parameter(Tensor):
    """Trainable tensor with a unique name path, e.g. "encoder.conv3.weight"."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
    else:
        out.requires_grad = False
        out._parents = ()
    return out


def _axis_size(shape: tuple, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    return int(np.prod([shape[a] for a in axis]))


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


# -- free functions -----------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                t._accumulate(piece)
        out._backward = bwd
    return out


def where(cond: np.ndarray, a, b) -> Tensor:
    """Elementwise select on a boolean (non-differentiable) condition."""
    cond = np.asarray(cond, dtype=bool)
    dtype = a.dtype if isinstance(a, Tensor) else b.dtype
    a = _as_tensor(a, dtype)
    b = _as_tensor(b, dtype)
    out = _node(np.where(cond, a.data, b.data), (a, b))
    if out._parents:
        def bwd(g):
            a._accumulate(np.where(cond, g, 0.0))
            b._accumulate(np.where(cond, 0.0, g))
        out._backward = bwd
    return out


def gather(x: Tensor, idx) -> Tensor:
    """Rows of `x` at integer indices `idx` (any index shape, axis 0)."""
    idx = np.asarray(idx)
    return x[idx]


def scatter_add(x: Tensor, idx, updates: Tensor) -> Tensor:
    """Copy of `x` with `updates` summed into rows `idx` (axis 0)."""
    idx = np.asarray(idx)
    data = x.data.copy()
    np.add.at(data, idx, updates.data)
    out = _node(data, (x, updates))
    if out._parents:
        def bwd(g):
            x._accumulate(g)
            updates._accumulate(g[idx])
        out._backward = bwd
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    out = _node(a.data @ b.data, (a, b))
    if out._parents:
        def bwd(g):
            ga = g @ b.data.swapaxes(-1, -2) if b.ndim > 1 else np.outer(g, b.data)
            gb = a.data.swapaxes(-1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
            a._accumulate(_unbroadcast_batched(ga, a.data.shape))
            b._accumulate(_unbroadcast_batched(gb, b.data.shape))
        out._backward = bwd
    return out


def _unbroadcast_batched(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis in range(max(grad.ndim - 2, 0)):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Valid 1-D convolution: x (T, Cin), w (Cout, Cin, K) -> (T', Cout).

    T' = floor((T - K) / stride) + 1.  No padding; the caller pads
    explicitly when length preservation is needed.
    """
    T, cin = x.data.shape
    cout, cin_w, k = w.data.shape
    if cin != cin_w:
        raise ValueError(f"conv1d channel mismatch: input {x.shape} vs weight {w.shape}")
    if T < k:
        raise ValueError(f"conv1d input too short: length {T} < kernel {k}")
    if stride < 1:
        raise ValueError(f"conv1d stride must be >= 1, got {stride}")
    windows = np.ascontiguousarray(
        np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)[::stride])
    out_data = np.tensordot(windows, w.data, axes=([1, 2], [1, 2]))
    out = _node(out_data, (x, w))
    if out._parents:
        t_out = out_data.shape[0]
        def bwd(g):
            if w.requires_grad:
                # (t,o) x (t,c,k) -> (o,c,k)
                w._accumulate(np.tensordot(g, windows, axes=([0], [0])))
            if x.requires_grad:
                # (t,o) x (o,c,k) -> per-window input grads, then scatter
                dwin = np.tensordot(g, w.data, axes=([1], [0]))
                dx = np.zeros_like(x.data)
                hi = stride * (t_out - 1) + 1
                for j in range(k):
                    dx[j : j + hi : stride] += dwin[:, :, j]
                x._accumulate(dx)
        out._backward = bwd
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0, dtype=x.data.dtype)))
    out = _node(x.data * cdf, (x,))
    if out._parents:
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi, dtype=x.data.dtype)
        out._backward = lambda g: x._accumulate(g * (cdf + x.data * pdf))
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (x,))
    if out._parents:
        def bwd(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))
        out._backward = bwd
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True)) + m
    out = _node(x.data - lse, (x,))
    if out._parents:
        def bwd(g):
            x._accumulate(g - np.exp(out.data) * g.sum(axis=axis, keepdims=True))
        out._backward = bwd
    return out


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    val = np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True)) + m
    out = _node(np.squeeze(val, axis=axis), (x,))
    if out._parents:
        def bwd(g):
            w = np.exp(x.data - np.expand_dims(out.data, axis))
            x._accumulate(np.expand_dims(g, axis) * np.where(np.isfinite(w), w, 0.0))
        out._backward = bwd
    return out


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise log(exp(a) + exp(b)), safe at -inf."""
    dtype = a.dtype if isinstance(a, Tensor) else b.dtype
    a = _as_tensor(a, dtype)
    b = _as_tensor(b, dtype)
    out = _node(np.logaddexp(a.data, b.data), (a, b))
    if out._parents:
        def bwd(g):
            # out = -inf only when both inputs are -inf; zero those weights
            with np.errstate(invalid="ignore"):
                wa = np.exp(a.data - out.data)
                wb = np.exp(b.data - out.data)
            bottom = np.isneginf(out.data)
            if bottom.any():
                wa[bottom] = 0.0
                wb[bottom] = 0.0
            a._accumulate(g * wa)
            b._accumulate(g * wb)
        out._backward = bwd
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalization over the last axis with learnable scale/shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(xhat * gamma.data + beta.data, (x, gamma, beta))
    if out._parents:
        def bwd(g):
            reduce_axes = tuple(range(g.ndim - 1))
            beta._accumulate(g.sum(axis=reduce_axes))
            gamma._accumulate((g * xhat).sum(axis=reduce_axes))
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (dxhat - m1 - xhat * m2))
        out._backward = bwd
    return out


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along `axis`; gradient at the origin is taken as 0."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis))
    out = _node(norm, (x,))
    if out._parents:
        def bwd(g):
            safe = np.maximum(np.expand_dims(norm, axis), np.finfo(x.data.dtype).tiny)
            x._accumulate(np.expand_dims(g, axis) * x.data / safe)
        out._backward = bwd
    return out


def xlogx(p: Tensor) -> Tensor:
    """p * log(p) with the 0 log 0 := 0 convention."""
    if np.any(p.data < 0):
        raise ValueError("xlogx requires non-negative input")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(p.data > 0, p.data * np.log(p.data), 0.0).astype(p.data.dtype)
    out = _node(val, (p,))
    if out._parents:
        def bwd(g):
            with np.errstate(divide="ignore"):
                d = np.where(p.data > 0, np.log(p.data) + 1.0, 0.0)
            p._accumulate(g * d)
        out._backward = bwd
    return out


def scale_grad(x: Tensor, factor: float) -> Tensor:
    """Forward identity; multiplies the backward gradient by `factor`."""
    out = _node(x.data, (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g * factor)
    return out


def straight_through(values: np.ndarray, grad_path: Tensor) -> Tensor:
    """Forward `values` exactly; route the gradient to `grad_path` unchanged."""
    if values.shape != grad_path.shape:
        raise ValueError(f"straight_through shape mismatch: {values.shape} vs {grad_path.shape}")
    out = _node(np.asarray(values, dtype=grad_path.dtype), (grad_path,))
    if out._parents:
        out._backward = lambda g: grad_path._accumulate(g)
    return out


def assert_finite(x, what: str) -> None:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in {what}")


def parameters_of(*items) -> list[Parameter]:
    """Flatten Parameters out of modules/lists (each item has .parameters() or is one)."""
    out: list[Parameter] = []
    for item in items:
        if isinstance(item, Parameter):
            out.append(item)
        elif hasattr(item, "parameters"):
            out.extend(item.parameters())
        elif isinstance(item, Iterable):
            out.extend(parameters_of(*item))
        else:
            raise TypeError(f"cannot extract parameters from {type(item)!r}")
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")
    return out
