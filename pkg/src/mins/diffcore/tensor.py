"""Tape-based reverse-mode autodiff over dense float64 arrays.

A :class:`Graph` is a tape. Every op appends a :class:`Tensor` node whose id is
its position on the tape, so parents always precede children and the backward
pass is a single reverse sweep.

Example
-------
>>> g = Graph()
>>> x = g.param("x", np.array([1.0, 2.0, 3.0]))
>>> loss = (x * x).sum()
>>> grads = g.backward(loss)
>>> grads["x"]
array([2., 4., 6.])
"""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node on a :class:`Graph` tape holding a cached forward value."""

    __slots__ = ("graph", "id", "value", "op", "parents", "ctx", "requires_grad", "name", "grad")

    def __init__(self, graph, value, op, parents=(), ctx=None, requires_grad=False, name=None):
        self.graph = graph
        self.id = len(graph.nodes)
        self.value = value
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        """Row-major contiguous copy of the value, flattened."""
        return np.ascontiguousarray(self.value).ravel()

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return self.graph.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.sub(self, other)

    def __rsub__(self, other):
        return self.graph.sub(other, self)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.neg(self)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)

    def sum(self, axis=None):
        return self.graph.sum(self, axis)

    def mean(self, axis=None):
        return self.graph.mean(self, axis)


class Graph:
    """Records ops in topological order and differentiates them in reverse.

    Parameters
    ----------
    check_finite : bool
        Raise :class:`NonFiniteError` as soon as an op produces NaN/Inf.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: List[Tensor] = []
        self.check_finite = check_finite

    # ------------------------------------------------------------------ leaves
    def leaf(self, value, name: Optional[str] = None, requires_grad: bool = False) -> Tensor:
        value = np.asarray(value, dtype=np.float64)
        if self.check_finite and not np.isfinite(value).all():
            raise NonFiniteError(f"non-finite leaf value{f' {name!r}' if name else ''}")
        node = Tensor(self, value, "leaf", requires_grad=requires_grad, name=name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Tensor:
        """A differentiable leaf; its gradient is returned by :meth:`backward`."""
        return self.leaf(value, name=name, requires_grad=True)

    def const(self, value) -> Tensor:
        return self.leaf(value)

    def _wrap(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.graph is not self:
                raise ValueError("tensor belongs to a different graph")
            return x
        return self.const(x)

    def _emit(self, op: str, value: np.ndarray, parents: Sequence[Tensor], ctx=None) -> Tensor:
        if self.check_finite and not np.isfinite(value).all():
            raise NonFiniteError(f"op {op!r} produced a non-finite value (node {len(self.nodes)})")
        rg = any(p.requires_grad for p in parents)
        node = Tensor(self, value, op, tuple(parents), ctx, requires_grad=rg)
        self.nodes.append(node)
        return node

    # --------------------------------------------------------------------- ops
    def matmul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")
        return self._emit("matmul", a.value @ b.value, (a, b))

    def _binary(self, op, fn, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        try:
            with np.errstate(all="ignore"):
                out = fn(a.value, b.value)
        except ValueError as exc:
            raise ShapeError(f"{op} {a.shape} with {b.shape}") from exc
        return self._emit(op, out, (a, b))

    def add(self, a, b) -> Tensor:
        return self._binary("add", np.add, a, b)

    def sub(self, a, b) -> Tensor:
        return self._binary("sub", np.subtract, a, b)

    def mul(self, a, b) -> Tensor:
        return self._binary("mul", np.multiply, a, b)

    def neg(self, a) -> Tensor:
        a = self._wrap(a)
        return self._emit("neg", -a.value, (a,))

    def relu(self, a) -> Tensor:
        a = self._wrap(a)
        return self._emit("relu", np.maximum(a.value, 0.0), (a,))

    def leaky_relu(self, a, slope: float = 0.2) -> Tensor:
        a = self._wrap(a)
        v = a.value
        out = np.maximum(v, slope * v) if 0.0 <= slope <= 1.0 else np.where(v > 0, v, slope * v)
        return self._emit("leaky_relu", out, (a,), slope)

    def tanh(self, a) -> Tensor:
        a = self._wrap(a)
        return self._emit("tanh", np.tanh(a.value), (a,))

    def sigmoid(self, a) -> Tensor:
        a = self._wrap(a)
        v = a.value
        with np.errstate(over="ignore"):
            out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-v)), np.exp(v) / (1.0 + np.exp(v)))
        return self._emit("sigmoid", out, (a,))

    def softplus(self, a) -> Tensor:
        """log(1 + exp(a)), computed stably; the GAN losses are written with it."""
        a = self._wrap(a)
        v = a.value
        return self._emit("softplus", np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v))), (a,))

    def log(self, a) -> Tensor:
        a = self._wrap(a)
        with np.errstate(all="ignore"):
            out = np.log(a.value)
        return self._emit("log", out, (a,))

    def exp(self, a) -> Tensor:
        a = self._wrap(a)
        with np.errstate(over="ignore"):
            out = np.exp(a.value)
        return self._emit("exp", out, (a,))

    def square(self, a) -> Tensor:
        a = self._wrap(a)
        return self._emit("square", a.value * a.value, (a,))

    def softmax(self, a) -> Tensor:
        a = self._wrap(a)
        v = a.value - a.value.max(axis=-1, keepdims=True)
        e = np.exp(v)
        return self._emit("softmax", e / e.sum(axis=-1, keepdims=True), (a,))

    def sum(self, a, axis=None) -> Tensor:
        a = self._wrap(a)
        return self._emit("sum", np.asarray(a.value.sum(axis=axis, keepdims=True)), (a,), axis)

    def mean(self, a, axis=None) -> Tensor:
        a = self._wrap(a)
        return self._emit("mean", np.asarray(a.value.mean(axis=axis, keepdims=True)), (a,), axis)

    def concat(self, tensors: Sequence, axis: int = -1) -> Tensor:
        ts = [self._wrap(t) for t in tensors]
        try:
            out = np.concatenate([t.value for t in ts], axis=axis)
        except ValueError as exc:
            raise ShapeError(f"concat of {[t.shape for t in ts]}") from exc
        sizes = [t.shape[axis] for t in ts]
        return self._emit("concat", out, ts, (axis, sizes))

    def reshape(self, a, shape) -> Tensor:
        a = self._wrap(a)
        try:
            out = a.value.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape {a.shape} -> {shape}") from exc
        return self._emit("reshape", out, (a,))

    def scale(self, a, c: float) -> Tensor:
        a = self._wrap(a)
        return self._emit("scale", a.value * c, (a,), c)

    # ---------------------------------------------------------------- backward
    def backward(self, output: Tensor) -> Dict[str, np.ndarray]:
        """Populate ``.grad`` on every node that needs it.

        Returns a mapping from parameter name to gradient. Unnamed differentiable
        leaves still get ``.grad`` set.
        """
        if output.graph is not self:
            raise ValueError("output node belongs to a different graph")
        if output.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        if not (0 <= output.id < len(self.nodes)) or self.nodes[output.id] is not output:
            raise ValueError("output node is not on this tape")
        for node in self.nodes[: output.id + 1]:
            node.grad = None
        output.grad = np.ones_like(output.value)
        grads: Dict[str, np.ndarray] = {}
        for node in reversed(self.nodes[: output.id + 1]):
            g = node.grad
            if g is None or not node.requires_grad:
                continue
            if node.op == "leaf":
                if node.name is not None:
                    # the same parameter may enter the tape more than once
                    grads[node.name] = grads[node.name] + g if node.name in grads else g
                continue
            for parent, pg in zip(node.parents, _VJP[node.op](node, g)):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        return grads


def _vjp_matmul(n, g):
    a, b = n.parents
    return (g @ b.value.T if a.requires_grad else None,
            a.value.T @ g if b.requires_grad else None)


def _vjp_add(n, g):
    a, b = n.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _vjp_sub(n, g):
    a, b = n.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _vjp_mul(n, g):
    a, b = n.parents
    return (_unbroadcast(g * b.value, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.value, b.shape) if b.requires_grad else None)


def _vjp_leaky(n, g):
    slope = n.ctx
    return (g * (slope + (1.0 - slope) * (n.parents[0].value > 0)),)


def _vjp_softmax(n, g):
    s = n.value
    return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)


def _vjp_reduce(n, g, scale=1.0):
    shape = n.parents[0].shape
    return (np.broadcast_to(g * scale, shape).copy(),)


def _vjp_mean(n, g):
    a = n.parents[0]
    count = a.value.size // max(n.value.size, 1)
    return _vjp_reduce(n, g, 1.0 / count)


def _vjp_concat(n, g):
    axis, sizes = n.ctx
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _vjp_sigmoid(n, g):
    s = n.value
    return (g * s * (1.0 - s),)


def _vjp_softplus(n, g):
    v = n.parents[0].value
    e = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return (g * sig,)


_VJP: Dict[str, Callable] = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "neg": lambda n, g: (-g,),
    "relu": lambda n, g: (g * (n.parents[0].value > 0),),
    "leaky_relu": _vjp_leaky,
    "tanh": lambda n, g: (g * (1.0 - n.value * n.value),),
    "sigmoid": _vjp_sigmoid,
    "softplus": _vjp_softplus,
    "log": lambda n, g: (g / n.parents[0].value,),
    "exp": lambda n, g: (g * n.value,),
    "square": lambda n, g: (2.0 * g * n.parents[0].value,),
    "softmax": _vjp_softmax,
    "sum": _vjp_reduce,
    "mean": _vjp_mean,
    "concat": _vjp_concat,
    "reshape": lambda n, g: (g.reshape(n.parents[0].shape),),
    "scale": lambda n, g: (g * n.ctx,),
}

SUPPORTED_OPS = tuple(sorted(_VJP))
