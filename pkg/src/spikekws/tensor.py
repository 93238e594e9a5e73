"""Dense float32 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` to an implicit tape.
Nodes carry a monotonically increasing sequence number, so the tape order is
the insertion order and :meth:`Tensor.backward` walks the reachable nodes in
strict reverse insertion order.

Only :func:`spike_threshold` deviates from the exact chain rule: its forward
pass is the Heaviside step and its backward pass uses the derivative of a
scaled sigmoid.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

DTYPE = np.float32
SURROGATE_CLAMP = 30.0

_seq = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, parameter updates)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("seq", "op", "parents", "backward_fn")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.seq = next(_seq)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"Node({self.op}, seq={self.seq})"


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    return arr


class Tensor:
    """A float32 array that may participate in the computation tape.

    Leaves created with ``requires_grad=True`` receive an accumulated
    ``grad`` array after :meth:`backward`. Intermediate results keep their
    producing node in ``node`` (the tape handle) and never store ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    # construction helpers -------------------------------------------------

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: Callable,
                op: str) -> "Tensor":
        """Wrap the result of an operation and record it on the tape.

        ``backward_fn(grad_out)`` must return one gradient (or ``None``) per
        parent, each with that parent's shape.
        """
        out = cls.__new__(cls)
        out.data = data if data.dtype == DTYPE else data.astype(DTYPE)
        out.grad = None
        out.name = None
        out.node = None
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out.node = Node(op, tuple(parents), backward_fn)
        return out

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)

    # array-like surface -----------------------------------------------------

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
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self):
        return self.shape[0]

    # operators --------------------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis):
        return tmax(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def square(self):
        return square(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, grad=None) -> None:
        backward(self, grad)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# broadcasting


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undoing numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and grad.shape[i + lead] != 1
    )
    out = grad.sum(axis=axes, dtype=np.float64) if axes else grad
    return np.asarray(out, dtype=DTYPE).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b),
                         lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b),
                         lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(ad * bd, (a, b), backward_fn, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward_fn(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward_fn, "div")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


# ---------------------------------------------------------------------------
# reductions (accumulated in float64)


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    out = np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).astype(DTYPE),)

    return Tensor.from_op(np.asarray(out, dtype=DTYPE), (x,), backward_fn, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape
    out = np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64) / count

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / DTYPE(count), shape).astype(DTYPE),)

    return Tensor.from_op(np.asarray(out, dtype=DTYPE), (x,), backward_fn, "mean")


def tmax(x: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    shape = x.shape

    def backward_fn(g):
        gx = np.zeros(shape, dtype=DTYPE)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return Tensor.from_op(out, (x,), backward_fn, "max")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot matmul shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor.from_op(ad @ bd, (a, b), backward_fn, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {orig} to {tuple(shape)}") from None
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                         lambda g: (np.ascontiguousarray(g.transpose(inv)),), "transpose")


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        g64 = g.astype(np.float64)
        return ((s * (g64 - (g64 * s).sum(axis=axis, keepdims=True))).astype(DTYPE),)

    return Tensor.from_op(s.astype(DTYPE), (x,), backward_fn, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data.astype(np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def backward_fn(g):
        g64 = g.astype(np.float64)
        return ((g64 - s * g64.sum(axis=axis, keepdims=True)).astype(DTYPE),)

    return Tensor.from_op(out.astype(DTYPE), (x,), backward_fn, "log_softmax")


# ---------------------------------------------------------------------------
# spike nonlinearity


def surrogate_factor(x: np.ndarray, scale_a: float) -> np.ndarray:
    """``a * sig_a(x) * sig_a(-x)`` in float64, with ``a*x`` clamped to +-30.

    Written as ``a * e / (1 + e)**2`` with ``e = exp(-|a x|)``, which is
    symmetric in ``x`` and cannot overflow.
    """
    z = np.clip(scale_a * np.asarray(x, dtype=np.float64), -SURROGATE_CLAMP, SURROGATE_CLAMP)
    e = np.exp(-np.abs(z))
    return scale_a * e / (1.0 + e) ** 2


def spike_threshold(x: Tensor, scale_a: float) -> Tensor:
    """Heaviside forward (``x > 0`` spikes), sigmoid-derivative backward."""
    if not scale_a > 0:
        raise ValueError(f"surrogate scale must be positive, got {scale_a}")
    xd = x.data
    out = (xd > 0).astype(DTYPE)

    def backward_fn(g):
        return ((g * surrogate_factor(xd, scale_a)).astype(DTYPE),)

    return Tensor.from_op(out, (x,), backward_fn, "spike_threshold")


# ---------------------------------------------------------------------------
# backward pass


def _reachable(root: Tensor) -> list:
    nodes, seen, stack = [], set(), [root]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or id(n) in seen:
            continue
        seen.add(id(n))
        nodes.append(t)
        stack.extend(p for p in n.parents if p.requires_grad)
    nodes.sort(key=lambda t: t.node.seq, reverse=True)
    return nodes


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones(loss.shape, dtype=DTYPE)
    else:
        grad = _as_array(grad)
        if grad.shape != loss.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != output shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    if loss.node is None:
        _accumulate_leaf(loss, grad)
        return

    pending = {id(loss): grad}
    for t in _reachable(loss):
        g = pending.pop(id(t), None)
        if g is None:
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p.node is None:
                _accumulate_leaf(p, pg)
            else:
                key = id(p)
                pending[key] = pg if key not in pending else pending[key] + pg


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=DTYPE)
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match leaf shape {t.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
