"""Small reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor` holding its inputs and a
closure that maps the output gradient to input gradients. ``backward``
walks the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class _IndexedGrad:
    """Gradient that is zero outside ``buffer[index]``.

    Indexing operations return this instead of a dense array so that
    ``backward`` can add the slice into one accumulator per input, rather
    than materializing a full zero array for every slice taken.
    """

    __slots__ = ("index", "value", "scatter")

    def __init__(self, index, value, scatter=False):
        self.index = index
        self.value = value
        self.scatter = scatter

    def add_to(self, buffer):
        if self.scatter:
            np.add.at(buffer, self.index, self.value)
        else:
            buffer[self.index] += self.value


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """Array with an optional gradient accumulator."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        owned = set()  # accumulators allocated here, safe to update in place
        for node in reversed(order):
            g = grads.pop(id(node), None)
            owned.discard(id(node))
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if isinstance(pg, _IndexedGrad):
                    if key not in owned:
                        grads[key] = (np.zeros(parent.shape) if key not in grads
                                      else np.array(grads[key], dtype=np.float64))
                        owned.add(key)
                    pg.add_to(grads[key])
                elif key not in grads:
                    grads[key] = pg
                elif key in owned:
                    grads[key] += pg
                else:
                    grads[key] = grads[key] + pg
                    owned.add(key)

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b), lambda g: (
            _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data - b.data, (a, b), lambda g: (
            _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b), lambda g: (
            _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data / b.data, (a, b), lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        return Tensor._make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        a = self
        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

        def back(g):
            return (_IndexedGrad(idx, g, scatter=not basic),)

        return Tensor._make(a.data[idx], (a,), back)

    # reductions and shape ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self
        return Tensor._make(a.data.reshape(*shape), (a,), lambda g: (g.reshape(a.shape),))

    def transpose(self, *axes):
        a = self
        axes = axes or None
        inv = None if axes is None else np.argsort(axes)
        return Tensor._make(np.transpose(a.data, axes), (a,),
                            lambda g: (np.transpose(g, inv),))

    @property
    def T(self):
        return self.transpose()


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def matmul(a, b):
    def back(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), back)


def tanh(x):
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = expit(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x):
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def exp(x):
    y = np.exp(x.data)
    return Tensor._make(y, (x,), lambda g: (g * y,))


def log(x):
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,))


def abs_(x):
    s = np.sign(x.data)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * s,))


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), back)


def take(x, index):
    """Rows ``x[index]`` for an integer index array (gather)."""
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        return (_IndexedGrad(index, g, scatter=True),)

    return Tensor._make(x.data[index], (x,), back)


def segment_sum(x, segment_ids, num_segments):
    """Sum rows of ``x`` sharing a segment id (scatter-add)."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.data)
    return Tensor._make(out, (x,), lambda g: (g[segment_ids],))


def where(mask, a, b):
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(np.where(mask, a.data, b.data), (a, b), lambda g: (
        _unbroadcast(np.where(mask, g, 0.0), a.shape),
        _unbroadcast(np.where(mask, 0.0, g), b.shape)))


def numerical_gradient(fn, arrays, h=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. each array, in place."""
    out = []
    for arr in arrays:
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + h
            fp = fn()
            arr[i] = orig - h
            fm = fn()
            arr[i] = orig
            grad[i] = (fp - fm) / (2 * h)
        out.append(grad)
    return out


def softplus(x):
    """``log(1 + exp(x))`` computed without overflow."""
    d = x.data
    y = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    s = expit(d)
    return Tensor._make(y, (x,), lambda g: (g * s,))
