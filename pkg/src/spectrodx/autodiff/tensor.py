"""Reverse-mode differentiable tensors over numpy arrays.

Every primitive's vector-Jacobian product is itself written with ``Tensor``
ops, so running backward with ``create_graph=True`` records a second graph
that can be differentiated again (needed by the gradient penalty).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Operand shapes are incompatible for an op."""


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def enable_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = True
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An ndarray plus the node that produced it.

    ``_vjp(g, out)`` maps the output cotangent ``g`` to one cotangent per
    parent (``None`` for parents that need none).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def __len__(self):
        return self.shape[0]

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, create_graph: bool = False):
        backward(self, create_graph=create_graph)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``; record it only if a parent needs grad."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
        out.op = op
    return out


def unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    axes = list(range(lead))
    for i, n in enumerate(shape):
        if n == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    out = sum_(g, tuple(axes), keepdims=True)
    return reshape(out, tuple(shape))


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def vjp(g, out):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), vjp, "add")


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g, out: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def vjp(g, out):
        ga = unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def vjp(g, out):
        ga = unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = unbroadcast(neg(div(mul(g, out), b)), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(a.data / b.data, (a, b), vjp, "div")


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def vjp(g, out):
        if p == 1.0:
            return (g,)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return make_op(a.data**p, (a,), vjp, "pow")


def exp(a: Tensor) -> Tensor:
    return make_op(np.exp(a.data), (a,), lambda g, out: (mul(g, out),), "exp")


def log(a: Tensor) -> Tensor:
    return make_op(np.log(a.data), (a,), lambda g, out: (div(g, a),), "log")


def tanh(a: Tensor) -> Tensor:
    return make_op(np.tanh(a.data), (a,), lambda g, out: (mul(g, 1.0 - mul(out, out)),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return make_op(y, (a,), lambda g, out: (mul(g, mul(out, 1.0 - out)),), "sigmoid")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g, out):
        ga = matmul(g, transpose(b, None)) if a.requires_grad else None
        gb = matmul(transpose(a, None), g) if b.requires_grad else None
        return ga, gb

    return make_op(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(a.data, axes), (a,), lambda g, out: (transpose(g, inv),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return make_op(data, (a,), lambda g, out: (reshape(g, src),), "reshape")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = a.shape
    return make_op(
        np.broadcast_to(a.data, shape).copy(), (a,), lambda g, out: (unbroadcast(g, src),), "broadcast"
    )


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    if axis is None:
        axes = tuple(range(a.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.ndim,)
    else:
        axes = tuple(ax % a.ndim for ax in axis)
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def vjp(g, out):
        return (broadcast_to(reshape(g, kept), src),)

    return make_op(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def constant(x, like: Tensor | None = None) -> Tensor:
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` through recorded ops, parents before children."""
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


def _sweep(root: Tensor, seed: Tensor, create_graph: bool, keep=frozenset()) -> dict[int, Tensor]:
    order = topological_order(root)
    grads: dict[int, Tensor] = {id(root): seed}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            parent_grads = node._vjp(g, node)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
            if not create_graph and not node.is_leaf and id(node) not in keep:
                # interior cotangents are not needed once propagated
                grads.pop(id(node), None)
    return grads


def _check_scalar(loss: Tensor):
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")


def backward(loss: Tensor, create_graph: bool = False):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf with requires_grad."""
    _check_scalar(loss)
    if not loss.requires_grad:
        return
    seed = Tensor(np.ones_like(loss.data))
    grads = _sweep(loss, seed, create_graph)
    for node in topological_order(loss):
        if node.is_leaf and id(node) in grads:
            g = grads[id(node)].data
            node.grad = g.copy() if node.grad is None else node.grad + g


def grad(output: Tensor, inputs: Iterable[Tensor], create_graph: bool = False,
         grad_output: Tensor | None = None) -> list[Tensor]:
    """Return d(output)/d(input) for each input without touching ``.grad``.

    With ``create_graph`` the returned tensors are themselves differentiable.
    """
    inputs = list(inputs)
    if grad_output is None:
        _check_scalar(output)
        grad_output = Tensor(np.ones_like(output.data))
    if not output.requires_grad:
        return [Tensor(np.zeros_like(x.data)) for x in inputs]
    grads = _sweep(output, grad_output, create_graph, keep=frozenset(id(x) for x in inputs))
    out = []
    for x in inputs:
        g = grads.get(id(x))
        out.append(g if g is not None else Tensor(np.zeros_like(x.data)))
    return out
