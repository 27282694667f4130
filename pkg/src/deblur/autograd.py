"""Reverse-mode differentiation over a fixed set of tensor operations.

Operations are recorded on a :class:`Graph` (a tape in creation order, which
is already topological). Every op function in this module accepts plain
arrays as well as :class:`Var` nodes: with no ``Var`` among its inputs it just
computes the value, so the metric code can be written once and used both for
evaluation and inside the training graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from deblur import tensor as T


@dataclass(frozen=True)
class _Op:
    forward: callable
    vjp: callable  # (g, out, *input_values, **attrs) -> tuple of input grads


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True)


def _div_vjp(g, out, a, b):
    ga = g / b
    gb = -g * a / (b * b)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


OPS: dict[str, _Op] = {
    "add": _Op(
        lambda a, b: a + b,
        lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    ),
    "sub": _Op(
        lambda a, b: a - b,
        lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    ),
    "mul": _Op(
        lambda a, b: a * b,
        lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
    ),
    "div": _Op(lambda a, b: a / b, _div_vjp),
    "neg": _Op(lambda a: -a, lambda g, out, a: (-g,)),
    "abs": _Op(np.abs, lambda g, out, a: (g * np.sign(a),)),
    "square": _Op(np.square, lambda g, out, a: (2 * a * g,)),
    "log": _Op(np.log, lambda g, out, a: (g / a,)),
    "exp": _Op(np.exp, lambda g, out, a: (g * out,)),
    "relu": _Op(T.relu, lambda g, out, a: (T.relu_vjp(g, a),)),
    "clamp_min": _Op(
        lambda a, lo: np.maximum(a, lo).astype(a.dtype, copy=False),
        lambda g, out, a, lo: (np.where(a > lo, g, 0).astype(g.dtype, copy=False),),
    ),
    "mean": _Op(
        lambda a: np.full((1, 1, 1), a.mean(dtype=np.float64), dtype=a.dtype),
        lambda g, out, a: (np.full(a.shape, g.item() / a.size, dtype=g.dtype),),
    ),
    "downsample2": _Op(T.downsample2, lambda g, out, a: (T.downsample2_vjp(g, a.shape),)),
    "window_mean": _Op(
        lambda a, taps: T.window_mean(a, taps),
        lambda g, out, a, taps: (T.window_mean_vjp(g, a.shape, taps),),
    ),
    "conv2d": _Op(T.conv2d_raw, lambda g, out, x, w, b: T.conv2d_vjp(g, x, w)),
}


class Var:
    """A value recorded on a :class:`Graph`."""

    __slots__ = ("graph", "value", "op", "inputs", "attrs", "requires_grad", "index", "name")
    __array_priority__ = 1000  # make ndarray <op> Var defer to Var

    def __init__(self, graph, value, op=None, inputs=(), attrs=None, requires_grad=False, name=None):
        self.graph = graph
        self.value = value
        self.op = op
        self.inputs = inputs
        self.attrs = attrs or {}
        self.requires_grad = requires_grad
        self.name = name
        self.index = len(graph.nodes)
        graph.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = self.op or ("param" if self.requires_grad else "const")
        return f"Var({kind}, shape={self.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)


@dataclass
class Graph:
    """Recorded operations in topological (creation) order."""

    nodes: list = field(default_factory=list)

    def leaf(self, value, requires_grad=True, name=None) -> Var:
        """An input or parameter; parameters may be 4-D kernels or 1-D biases."""
        return Var(self, np.asarray(value), requires_grad=requires_grad, name=name)

    def constant(self, value) -> Var:
        return Var(self, np.asarray(value), requires_grad=False)

    def replay(self) -> list:
        """Recompute every node forward from the recorded leaf values."""
        values = []
        for node in self.nodes:
            if node.op is None:
                values.append(node.value)
            else:
                args = [values[v.index] for v in node.inputs]
                values.append(OPS[node.op].forward(*args, **node.attrs))
        return values


def _apply(name: str, *inputs, **attrs):
    op = OPS[name]
    graph = next((x.graph for x in inputs if isinstance(x, Var)), None)
    dtype = next((value_of(x).dtype for x in inputs if isinstance(x, (Var, np.ndarray))), None)
    if graph is None:
        return op.forward(*[_coerce(x, dtype) for x in inputs], **attrs)
    nodes = []
    for x in inputs:
        if isinstance(x, Var):
            if x.graph is not graph:
                raise ValueError("cannot combine nodes from different graphs")
            nodes.append(x)
        else:
            nodes.append(graph.constant(_coerce(x, dtype)))
    value = op.forward(*[n.value for n in nodes], **attrs)
    return Var(graph, value, op=name, inputs=tuple(nodes), attrs=attrs)


def _coerce(x, dtype=None):
    # python scalars become (1, 1, 1) tensors of the surrounding dtype
    if isinstance(x, np.ndarray):
        return x
    return np.full((1, 1, 1), x, dtype=dtype)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def add(a, b):
    return _apply("add", a, b)


def sub(a, b):
    return _apply("sub", a, b)


def mul(a, b):
    return _apply("mul", a, b)


def div(a, b):
    return _apply("div", a, b)


def neg(a):
    return _apply("neg", a)


def absolute(a):
    return _apply("abs", a)


def square(a):
    return _apply("square", a)


def log(a):
    return _apply("log", a)


def exp(a):
    return _apply("exp", a)


def relu(a):
    return _apply("relu", a)


def clamp_min(a, lo: float):
    return _apply("clamp_min", a, lo=lo)


def mean(a):
    """Global mean as a (1, 1, 1) scalar."""
    return _apply("mean", a)


def downsample2(a):
    return _apply("downsample2", a)


def window_mean(a, taps: np.ndarray):
    return _apply("window_mean", a, taps=taps)


def conv2d(x, weights, bias):
    return _apply("conv2d", x, weights, bias)


def backward(graph: Graph, loss: Var) -> dict:
    """Return d(loss)/d(leaf) for every leaf created with ``requires_grad``.

    Leaves the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, Var) or loss.graph is not graph:
        raise ValueError("loss must be a node of the given graph")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: list = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(loss.value)
    for node in reversed(graph.nodes[: loss.index + 1]):
        g = grads[node.index]
        if g is None or node.op is None:
            continue
        in_vals = [v.value for v in node.inputs]
        in_grads = OPS[node.op].vjp(g, node.value, *in_vals, **node.attrs)
        for v, gv in zip(node.inputs, in_grads):
            if v.op is None and not v.requires_grad:
                continue
            if grads[v.index] is None:
                grads[v.index] = gv
            else:
                grads[v.index] = grads[v.index] + gv
    out = {}
    for node in graph.nodes:
        if node.op is None and node.requires_grad:
            g = grads[node.index] if node.index <= loss.index else None
            out[node] = np.zeros_like(node.value) if g is None else g.astype(node.value.dtype, copy=False)
    return out
