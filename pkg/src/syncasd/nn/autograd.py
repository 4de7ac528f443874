"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tensor` records the op that produced it and a closure that pushes
the output gradient back to its inputs.  :meth:`Tensor.backward` walks the
graph in reverse topological order.  Every op here has an exact analytic
backward rule; :func:`syncasd.nn.gradcheck.grad_check` verifies them.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def precision(dtype):
    """Evaluate new tensors in ``dtype`` inside the block (used by grad_check)."""
    global _DTYPE
    prev = _DTYPE
    _DTYPE = dtype
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            if not _is_leaf_like(node):
                node.grad = None

    # Operator sugar; the functional forms below are the real definitions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Param(Tensor):
    """A learnable leaf.  ``values`` aliases ``data``."""

    __slots__ = ()

    def __init__(self, values, name: str = ""):
        super().__init__(values, requires_grad=True, name=name)

    @property
    def values(self) -> np.ndarray:
        return self.data

    @values.setter
    def values(self, v) -> None:
        v = np.asarray(v, dtype=_DTYPE)
        if v.shape != self.data.shape:
            raise DimensionError(f"cannot assign {v.shape} to param {self.name!r} of shape {self.data.shape}")
        self.data = v


def _is_leaf_like(node: Tensor) -> bool:
    return isinstance(node, Param) or not node._parents


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _send(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t._accumulate(g)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        _send(a, _unbroadcast(g, a.shape))
        _send(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        _send(a, _unbroadcast(g * b.data, a.shape))
        _send(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        _send(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Branch-free stable form: exp never sees a positive argument.
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def backward(g):
        _send(x, g * s * (1.0 - s))

    return _make(s, (x,), backward)


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), computed without overflow."""
    x = as_tensor(x)
    z = x.data
    data = np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        _send(x, g * _sigmoid(-z))

    return _make(data, (x,), backward)


def log1mexp(x: Tensor) -> Tensor:
    """log(1 - exp(x)) for x <= 0; x == 0 is nudged to the smallest negative double."""
    x = as_tensor(x)
    if np.any(x.data > 0):
        raise ValueError("log1mexp needs non-positive input")
    z = np.minimum(x.data, -np.finfo(x.data.dtype).tiny)
    # Maechler's switch keeps both branches accurate.
    data = np.where(z > -np.log(2.0), np.log(-np.expm1(z)), np.log1p(-np.exp(z)))

    def backward(g):
        _send(x, g * (np.exp(z) / np.expm1(z)))

    return _make(data, (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _send(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _send(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(data, (a, b), backward)


def linear(x, W, b=None) -> Tensor:
    """x @ W + b over the last axis of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and as_tensor(b).shape != (W.shape[1],):
        raise DimensionError(f"linear: bias {as_tensor(b).shape} does not match weight {W.shape}")
    out = matmul(x, W)
    return out if b is None else add(out, b)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)

    def backward(g):
        _send(x, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(x.data, -1, -2), (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _send(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (x,), backward)


def conv1d(x, W, b=None, stride: int = 1) -> Tensor:
    """1-D convolution along axis -2.

    ``x`` is ``[..., L, din]``, ``W`` is ``[k, din, dout]``.  Output has
    ``ceil(L / stride)`` rows; zero padding is split with the extra row on the
    right, which for ``stride == 1`` and odd ``k`` is ordinary "same" padding.
    """
    x, W = as_tensor(x), as_tensor(W)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    if W.ndim != 3 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernel {W.shape}")
    k, din, dout = W.shape
    L = x.shape[-2]
    n_out = -(-L // stride)
    pad = max((n_out - 1) * stride + k - L, 0)
    left = pad // 2
    lead = x.shape[:-2]
    xp = np.zeros(lead + (L + pad, din))
    xp[..., left:left + L, :] = x.data
    span = (n_out - 1) * stride + 1
    cols = np.stack([xp[..., j:j + span:stride, :] for j in range(k)], axis=-2)
    cols = cols.reshape(lead + (n_out, k * din))
    Wm = W.data.reshape(k * din, dout)
    data = cols @ Wm

    def backward(g):
        if W.requires_grad:
            gW = np.swapaxes(cols, -1, -2) @ g
            while gW.ndim > 2:
                gW = gW.sum(axis=0)
            _send(W, gW.reshape(k, din, dout))
        if x.requires_grad:
            gcols = (g @ Wm.T).reshape(lead + (n_out, k, din))
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + span:stride, :] += gcols[..., j, :]
            _send(x, gxp[..., left:left + L, :])

    out = _make(data, (x, W), backward)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------- shape plumbing

def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    orig = x.shape

    def backward(g):
        _send(x, g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        data = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        for t, piece in zip(xs, np.split(g, sizes, axis=axis)):
            _send(t, piece)

    return _make(data, xs, backward)


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim

    def backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, ax, 0)
        # Gathered axes sit at ax..ax+index.ndim-1 in g; bring them to the front.
        src = np.moveaxis(g, list(range(ax, ax + index.ndim)), list(range(index.ndim)))
        np.add.at(moved, index, src)
        _send(x, gx)

    return _make(np.take(x.data, index, axis=ax), (x,), backward)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, x.shape))

    return _make(data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def stack_sum(xs: Iterable[Tensor]) -> Tensor:
    """Sum a sequence of same-shape tensors in the given (fixed) order."""
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ValueError("stack_sum of an empty sequence")
    data = xs[0].data.copy()
    for t in xs[1:]:
        if t.shape != data.shape:
            raise DimensionError(f"stack_sum: shape {t.shape} differs from {data.shape}")
        data = data + t.data

    def backward(g):
        for t in xs:
            _send(t, g)

    return _make(data, xs, backward)
