"""A small reverse-mode differentiation tape over numpy arrays.

Only the primitives the model zoo needs are provided: affine maps, tanh,
sigmoid, softplus, log, exp, sums, elementwise products, log-sum-exp,
clipping and a handful of shape operations.
"""

import numpy as np


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node on the tape holding a float64 array."""

    __slots__ = ("value", "grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def backward(self):
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                g = _unbroadcast(g, parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def const(x):
    return x if isinstance(x, Var) else Var(x)


def add(a, b):
    a, b = const(a), const(b)
    return Var(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = const(a), const(b)
    return Var(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = const(a), const(b)
    return Var(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def div(a, b):
    a, b = const(a), const(b)
    out = a.value / b.value
    return Var(out, (a, b), lambda g: (g / b.value, -g * out / b.value))


def neg(a):
    a = const(a)
    return Var(-a.value, (a,), lambda g: (-g,))


def matmul(a, b):
    """``a @ b`` where ``b`` is a matrix or vector; ``a`` may carry batch dims."""
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if bv.ndim > 2:
        raise ValueError("right operand of matmul must be 1-D or 2-D")
    out = av @ bv

    def backward(g):
        if bv.ndim == 1:
            ga = np.multiply.outer(g, bv)
            gb = (av * g[..., None]).reshape(-1, bv.shape[0]).sum(axis=0)
        elif av.ndim == 1:
            ga = bv @ g
            gb = np.outer(av, g)
        else:
            ga = g @ bv.T
            gb = av.reshape(-1, bv.shape[0]).T @ g.reshape(-1, bv.shape[1])
        return ga, gb

    return Var(out, (a, b), backward)


def transpose(a):
    a = const(a)
    return Var(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = const(a)
    old = a.value.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, index):
    a = const(a)

    def backward(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return (out,)

    return Var(a.value[index], (a,), backward)


def concat(parts, axis=-1):
    parts = [const(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Var(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


def vsum(a, axis=None):
    a = const(a)
    shape = a.value.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Var(a.value.sum(axis=axis), (a,), backward)


def mean(a, axis=None):
    a = const(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis) * (1.0 / n)


def tanh(a):
    a = const(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = const(a)
    out = _sigmoid(np.atleast_1d(a.value)).reshape(a.value.shape)
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = const(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    sig = _sigmoid(np.atleast_1d(x)).reshape(x.shape)
    return Var(out, (a,), lambda g: (g * sig,))


def exp(a):
    a = const(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a):
    a = const(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def relu(a):
    """The hinge ``[a]_+``; subgradient 0 at the kink."""
    a = const(a)
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    a = const(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return Var(np.clip(a.value, lo, hi), (a,), lambda g: (g * mask,))


def logsumexp(a, axis=-1):
    a = const(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + m).squeeze(axis)
    weights = shifted / total
    return Var(out, (a,), lambda g: (np.expand_dims(g, axis) * weights,))


def softmax(a, axis=-1):
    a = const(a)
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Var(out, (a,), backward)
