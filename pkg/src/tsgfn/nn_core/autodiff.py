"""Tensor-level reverse-mode differentiation over numpy arrays.

Only the handful of operations the policies need are provided. Each op builds
a node holding its parents and a closure mapping the output gradient to
parent gradients; :func:`backward` walks the tape in reverse topological order.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    def __init__(self, what: str, value):
        super().__init__(f"non-finite {what}: {value!r}")
        self.value = value


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(ax, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g, da.shape), _unbroadcast(g, db.shape)

    return _node(da + db, (a, b), bw)


def sub(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g, da.shape), -_unbroadcast(g, db.shape)

    return _node(da - db, (a, b), bw)


def mul(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def bw(g):
        return (_unbroadcast(g * db, da.shape) if _live(a) else None,
                _unbroadcast(g * da, db.shape) if _live(b) else None)

    return _node(da * db, (a, b), bw)


def square(a) -> Tensor:
    da = _data(a)
    return _node(da * da, (a,), lambda g: (2.0 * da * g,))


def _live(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def matmul(a, b) -> Tensor:
    da, db = _data(a), _data(b)

    def bw(g):
        return (g @ db.T if _live(a) else None), (da.T @ g if _live(b) else None)

    return _node(da @ db, (a, b), bw)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    da = _data(a)
    pos = da > 0
    return _node(np.where(pos, da, slope * da), (a,), lambda g: (np.where(pos, g, slope * g),))


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def tanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def reshape(a, shape) -> Tensor:
    da = _data(a)
    return _node(da.reshape(shape), (a,), lambda g: (g.reshape(da.shape),))


def masked_log_softmax(a, mask: np.ndarray) -> Tensor:
    """Log-softmax over the last axis restricted to ``mask``; masked entries are ``-inf``."""
    da = _data(a)
    mask = np.broadcast_to(mask, da.shape)
    if not mask.any(-1).all():
        raise ValueError("masked_log_softmax: a row has no valid entries")
    shifted = np.where(mask, da, -np.inf)
    shifted = shifted - shifted.max(-1, keepdims=True)
    with np.errstate(divide="ignore"):
        out = shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))
    prob = np.exp(out)

    def bw(g):
        g = np.where(mask, g, 0.0)
        return (g - prob * g.sum(-1, keepdims=True),)

    return _node(out, (a,), bw)


def take_last(a, index: np.ndarray) -> Tensor:
    """``a[..., index]`` per leading position: ``a`` is ``(N, ..., L)``, ``index`` is ``(N,)``."""
    da = _data(a)
    idx = index.reshape((-1,) + (1,) * (da.ndim - 1))
    idx = np.broadcast_to(idx, da.shape[:-1] + (1,))
    out = np.take_along_axis(da, idx, axis=-1)[..., 0]

    def bw(g):
        gz = np.zeros_like(da)
        np.put_along_axis(gz, idx, g[..., None], axis=-1)
        return (gz,)

    return _node(out, (a,), bw)


def rows(a, index: np.ndarray, unique: bool = False) -> Tensor:
    """``a[index]``; pass ``unique=True`` when ``index`` has no repeats (cheaper backward)."""
    da = _data(a)

    def bw(g):
        gz = np.zeros_like(da)
        if unique:
            gz[index] = g
        else:
            np.add.at(gz, index, g)
        return (gz,)

    return _node(da[index], (a,), bw)


def segment_sum(a, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; output has ``num_segments`` rows."""
    da = _data(a)
    onehot = np.zeros((num_segments, len(da)))
    onehot[segments, np.arange(len(da))] = 1.0
    out = (onehot @ da.reshape(len(da), -1)).reshape((num_segments,) + da.shape[1:])
    return _node(out, (a,), lambda g: (g[segments],))


def total(a) -> Tensor:
    da = _data(a)
    return _node(np.asarray(da.sum()), (a,), lambda g: (np.broadcast_to(g, da.shape).copy(),))


def scale(a, c: float) -> Tensor:
    return _node(_data(a) * c, (a,), lambda g: (g * c,))


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires grad and feeds ``loss``."""
    value = loss.data
    if value.shape not in ((), (1,)):
        raise ValueError(f"backward needs a scalar, got shape {value.shape}")
    if not np.isfinite(value).all():
        raise NonFiniteError("loss", float(value.reshape(-1)[0]))
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if not (isinstance(p, Tensor) and p.requires_grad):
                continue
            p.grad = g if p.grad is None else p.grad + g
        if node._parents:
            node.grad = None if node is not loss else node.grad
