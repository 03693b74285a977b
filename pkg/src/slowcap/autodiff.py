"""Minimal tape-based reverse-mode automatic differentiation on float64 arrays.

Gradients are only tracked inside an active :class:`Tape`::

    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = (x * x).sum()
    backward(loss)
    x.grad  # -> [2., 2., 2.]

Outside a tape every op runs in inference mode and records nothing.
Elementwise binary ops accept same-shape operands or a scalar on either side;
anything richer goes through an explicit :func:`broadcast_to`.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import DomainError, NonFiniteError, ShapeError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so every node's inputs were produced
    earlier on the tape (or are leaves). Tapes are confined to the thread that
    entered them.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, inputs, backward):
    """Wrap an op output and record it on the active tape when needed."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        node = _Node(out, inputs, backward)
        out._node = node
        tape.nodes.append(node)
    return out


def backward(loss, grad=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Nodes are visited in exact reverse tape order. Leaf gradients accumulate
    across calls; call ``zero_grad`` to reset them.
    """
    if loss.data.ndim != 0 and grad is None:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor requiring grad")
    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if loss.is_leaf:
        loss.grad = loss.grad + seed
        return
    grads = {id(loss): seed}
    for node in reversed(loss._tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                inp.grad = inp.grad + gi
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


# -- elementwise ------------------------------------------------------------


def _binary_operands(a, b, name):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{name}: cannot combine shapes {a.shape} and {b.shape}")
    return a, b


def _unbroadcast(g, shape):
    return g.sum() if shape == () and g.shape != () else g


def add(a, b):
    a, b = _binary_operands(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise DomainError("log of non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    if (a.data < 0).any():
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)

    # subgradient 0 at the origin, so norms of an all-zero vector stay usable
    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * 0.5 / safe, 0.0),)

    return _result(out, (a,), bw)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


# -- linear algebra and reductions -------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), bw)


def amax(a, axis=None):
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    if axis is None:
        flat = int(np.argmax(a.data))
        out = a.data.reshape(-1)[flat]

        def bw(g):
            ga = np.zeros(a.size)
            ga[flat] = g
            return (ga.reshape(a.shape),)

        return _result(out, (a,), bw)

    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _result(out, (a,), bw)


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def broadcast_to(a, shape):
    """Explicit numpy-style broadcast; the backward pass sums the copies."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from exc
    lead = len(shape) - a.ndim
    stretched = tuple(
        i + lead for i, n in enumerate(a.shape) if n == 1 and shape[i + lead] != 1
    )

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if stretched:
            g = g.sum(axis=tuple(i - lead for i in stretched), keepdims=True)
        return (g,)

    return _result(out, (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), bw)


def getitem(a, index):
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)
    out = a.data[index]
    advanced = _is_advanced(index)

    def bw(g):
        ga = np.zeros_like(a.data)
        if advanced:
            np.add.at(ga, index, g)
        else:
            ga[index] = g
        return (ga,)

    return _result(np.array(out, copy=True), (a,), bw)


def _is_advanced(index):
    parts = index if isinstance(index, tuple) else (index,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


# -- softmax family -------------------------------------------------------------


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), bw)


def softmax_np(x, axis=-1):
    """Plain numpy softmax with max subtraction, for inference paths."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "sqrt": sqrt,
    "abs": absolute,
}


def elementwise(op, *inputs):
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(ELEMENTWISE)}")
    return fn(*inputs)
