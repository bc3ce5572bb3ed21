"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to a node that depends on a
parameter. ``Tape.backward`` replays the records in reverse and accumulates
the parameter adjoints into the owning :class:`~mblfe.numerics.params.ParamStore`.

Only the primitives the model needs are provided. Operations on plain arrays
(or nodes that do not depend on parameters) are evaluated eagerly and never
recorded, so the same functions serve both training and inference code.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import functional as F


class TapeError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "tape", "name")

    # ndarray (op) Node dispatches to Node's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape=None, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.name = name

    @property
    def requires_grad(self):
        return self.tape is not None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Node{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a node is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of primitive applications bound to one ParamStore."""

    def __init__(self, store=None):
        self.store = store
        self._records = []
        self._params = {}
        self._consumed = False

    def __len__(self):
        return len(self._records)

    def param(self, name):
        """Leaf node for parameter ``name``; repeated calls share one node."""
        if self._consumed:
            raise TapeError("tape already consumed by backward; start a new forward pass")
        node = self._params.get(name)
        if node is None:
            node = Node(self.store[name], tape=self, name=name)
            self._params[name] = node
        return node

    def params(self):
        return dict(self._params)

    def record(self, out, inputs, backward_fn):
        if self._consumed:
            raise TapeError("tape already consumed by backward; start a new forward pass")
        self._records.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into the store's gradient slots."""
        if self._consumed:
            raise TapeError("backward called twice on the same tape without a new forward pass")
        if loss.tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.value.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.value)
        for out, inputs, fn in reversed(self._records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for node, g in zip(inputs, grads):
                if g is None or not node.requires_grad:
                    continue
                if node.grad is None:
                    node.grad = np.array(g, dtype=node.value.dtype, copy=True)
                else:
                    node.grad += g
        if self.store is not None:
            for name, node in self._params.items():
                if node.grad is not None:
                    self.store.grads[name] += node.grad
        # drop references so large intermediates can be freed
        self._records = []


def backward(tape, loss):
    tape.backward(loss)


def lift(x, dtype=None):
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=dtype))


def value(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _emit(out_value, inputs, backward_fn):
    tape = None
    for node in inputs:
        if node.requires_grad:
            tape = node.tape
            break
    out = Node(out_value, tape=tape)
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b):
    if isinstance(a, Node) and not isinstance(b, Node):
        b = lift(b, dtype=a.dtype)
    elif isinstance(b, Node) and not isinstance(a, Node):
        a = lift(a, dtype=b.dtype)
    else:
        a, b = lift(a), lift(b)
    return a, b


def add(a, b):
    a, b = _pair(a, b)
    return _emit(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    a = lift(a)
    return _emit(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def matmul(a, b):
    """2-D matrix product."""
    a, b = _pair(a, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def einsum(subscripts, a, b):
    """Two-operand einsum without repeated or operand-private summed indices."""
    a, b = _pair(a, b)
    ins, out_idx = subscripts.replace(" ", "").split("->")
    ia, ib = ins.split(",")
    for idx in (ia, ib):
        if len(set(idx)) != len(idx):
            raise ValueError(f"repeated index in {subscripts!r}")
        for ch in idx:
            if ch not in out_idx and ch not in (ib if idx is ia else ia):
                raise ValueError(f"index {ch!r} is summed within one operand in {subscripts!r}")
    av, bv = a.value, b.value
    out = np.einsum(subscripts, av, bv)

    def backward_fn(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, bv) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, av) if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), backward_fn)


def spmm(matrix, x):
    """Constant sparse matrix times dense node."""
    if not sp.issparse(matrix):
        raise TypeError("spmm expects a scipy sparse matrix")
    x = lift(x)
    if matrix.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: {matrix.shape} @ {x.shape}")
    out = np.asarray(matrix @ x.value, dtype=x.dtype)
    mt = matrix.T.tocsr()
    return _emit(out, (x,), lambda g: (np.asarray(mt @ g, dtype=x.dtype),))


def transpose(a):
    a = lift(a)
    return _emit(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = lift(a)
    old = a.shape
    return _emit(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand_dims(a, axis):
    a = lift(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def take(a, index):
    """Row/element gather; the adjoint scatter-adds so repeated indices accumulate."""
    a = lift(a)

    def backward_fn(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _emit(a.value[index], (a,), backward_fn)


def stack(nodes, axis=0):
    nodes = [lift(n) for n in nodes]
    out = np.stack([n.value for n in nodes], axis=axis)

    def backward_fn(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(nodes)))

    return _emit(out, tuple(nodes), backward_fn)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = lift(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _emit(np.asarray(out), (a,), backward_fn)


def mean(a, axis=None):
    a = lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    return sum(a, axis=axis) * (1.0 / count)


def tanh(a):
    a = lift(a)
    out = np.tanh(a.value)
    return _emit(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a):
    a = lift(a)
    out = F.sigmoid(a.value)
    return _emit(np.asarray(out), (a,), lambda g: (g * out * (1 - out),))


def log_sigmoid(a):
    a = lift(a)
    out = F.log_sigmoid(a.value)
    # d/dx log sigma(x) = sigma(-x)
    return _emit(np.asarray(out), (a,), lambda g: (g * F.sigmoid(-a.value),))


def softplus(a):
    a = lift(a)
    out = F.softplus(a.value)
    return _emit(np.asarray(out), (a,), lambda g: (g * F.sigmoid(a.value),))


def exp(a):
    a = lift(a)
    out = np.exp(a.value)
    return _emit(out, (a,), lambda g: (g * out,))


def log(a):
    a = lift(a)
    return _emit(np.log(a.value), (a,), lambda g: (g / a.value,))


def softmax(a, axis=-1):
    a = lift(a)
    out = F.softmax(a.value, axis=axis)

    def backward_fn(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _emit(out, (a,), backward_fn)


def logsumexp(a, axis=-1):
    a = lift(a)
    out = F.logsumexp(a.value, axis=axis)

    def backward_fn(g):
        weights = F.softmax(a.value, axis=axis)
        return (np.expand_dims(g, axis) * weights,)

    return _emit(np.asarray(out), (a,), backward_fn)


def square_sum(a):
    a = lift(a)
    av = a.value
    return _emit(np.asarray(np.sum(av * av)), (a,), lambda g: (2 * g * av,))
