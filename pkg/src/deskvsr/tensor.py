"""Dense row-major tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent. :func:`backward` walks the recorded graph
in reverse topological order and accumulates additively over fan-out.
"""
from __future__ import annotations

from contextlib import contextmanager
import math

import numpy as np

from .errors import BackwardError, ShapeMismatchError

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_grad_enabled = True
default_dtype = np.dtype(np.float32)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            dt = np.dtype(dtype)
        elif arr.dtype in _DTYPES:
            dt = arr.dtype
        else:
            dt = default_dtype
        if dt not in _DTYPES:
            raise TypeError(f"unsupported dtype {dt}; use float32 or float64")
        arr = np.ascontiguousarray(arr, dtype=dt)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if 0 in arr.shape:
            raise ValueError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = ""
        self._consumed = False

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t._op = ""
        t._consumed = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg}{op})"

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
        return scalar_mul(self, -1.0)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        if dtype is not None and x.dtype != np.dtype(dtype):
            raise TypeError(f"expected {np.dtype(dtype)}, got {x.dtype}")
        return x
    return Tensor(x, dtype=dtype)


def record(data, parents, backward_fn, op):
    """Wrap an op result, attaching a backward rule when any parent needs grad."""
    out = Tensor._wrap(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every requires_grad leaf."""
    if not isinstance(root, Tensor):
        raise TypeError("backward expects a Tensor")
    if root.size != 1:
        raise BackwardError(f"backward root must be a scalar, got shape {root.shape}")
    if root._consumed:
        raise BackwardError("graph already consumed by a previous backward call")
    if not root.requires_grad:
        raise BackwardError("backward on a tensor that does not require grad (detached)")

    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.array(g, dtype=node.dtype, order="C")
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            if pg.dtype != p.dtype:
                pg = pg.astype(p.dtype)
            key = id(p)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
        node._parents = ()
        node._backward = None
        node._consumed = True


# elementwise ---------------------------------------------------------------

def _pair(a, b, op):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(op, a.shape, b.shape)
    if a.dtype != b.dtype:
        raise TypeError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")
    return a, b


def add(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add_scalar(a, b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return add_scalar(b, a)
    a, b = _pair(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add_scalar(a, -b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return add_scalar(scalar_mul(b, -1.0), a)
    a, b = _pair(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if not isinstance(b, Tensor) and np.isscalar(b):
        return scalar_mul(a, b)
    if not isinstance(a, Tensor) and np.isscalar(a):
        return scalar_mul(b, a)
    a, b = _pair(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scalar_mul(x, s):
    x = as_tensor(x)
    s = x.dtype.type(s)
    return record(x.data * s, (x,), lambda g: (g * s,), "scalar_mul")


def add_scalar(x, s):
    x = as_tensor(x)
    s = x.dtype.type(s)
    return record(x.data + s, (x,), lambda g: (g,), "add_scalar")


# structural ----------------------------------------------------------------

def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        same = t.ndim == ref.ndim and all(
            t.shape[d] == ref.shape[d] for d in range(ref.ndim) if d != ax
        )
        if not same:
            raise ShapeMismatchError("concat", ref.shape, t.shape, detail=f"axis={ax}")
        if t.dtype != ref.dtype:
            raise TypeError(f"concat: dtype mismatch {ref.dtype} vs {t.dtype}")
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(int(lo), int(hi))
            parts.append(np.ascontiguousarray(g[tuple(idx)]))
        return tuple(parts)

    return record(out, tuple(tensors), bw, "concat")


def concat_channels(tensors):
    return concat(tensors, axis=1)


def slice_axis(x, axis, start, stop):
    """Contiguous copy of ``x`` restricted to ``start:stop`` along ``axis``."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    if not (0 <= start < stop <= n):
        raise ShapeMismatchError("slice", x.shape, (start, stop), detail=f"axis={ax}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])
    shape = x.shape
    dtype = x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return record(out, (x,), bw, "slice")


def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    if out.shape != shape and -1 not in shape:
        raise ShapeMismatchError("reshape", x.shape, shape)
    src = x.shape
    return record(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError("permute", x.shape, axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),), "permute")


# reductions ----------------------------------------------------------------

def sum(x):  # noqa: A001 - mirrors the op name
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1)
    shape = x.shape
    return record(out, (x,), lambda g: (np.full(shape, g[0], dtype=g.dtype),), "sum")


def mean(x):
    x = as_tensor(x)
    n = x.size
    out = np.asarray(x.data.sum() / x.dtype.type(n), dtype=x.dtype).reshape(1)
    shape = x.shape

    def bw(g):
        return (np.full(shape, g[0] / g.dtype.type(n), dtype=g.dtype),)

    return record(out, (x,), bw, "mean")


def zeros(shape, dtype=None):
    return Tensor._wrap(np.zeros(shape, dtype=np.dtype(dtype or default_dtype)))


def numel(shape):
    return math.prod(shape)
