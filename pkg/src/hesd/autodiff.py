"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every backward rule is written in terms of differentiable ``Tensor`` ops, so the
gradient graph can itself be differentiated. That is what makes exact
Hessian-vector products possible: take ``g = grad(loss, w, create_graph=True)``
and differentiate ``<g, v>`` a second time.

Nodes never store gradients; ``grad`` walks the graph functionally, so one
recorded graph may be differentiated any number of times.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["Tensor", "grad", "as_tensor", "constant", "value_and_grad",
           "hessian_vector_product"]

Vjp = Callable[["Tensor", tuple, "Tensor"], tuple]


class Tensor:
    __slots__ = ("data", "parents", "vjp", "requires_grad", "name")

    def __init__(self, data, parents: tuple = (), vjp: Vjp | None = None,
                 requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __rtruediv__(self, other):
        return mul(as_tensor(other), power(self, -1.0))

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        n = self.data.size if axis is None else self.data.shape[axis]
        return reduce_sum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)

    def tanh(self) -> Tensor:
        return tanh(self)

    def relu(self) -> Tensor:
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def _make(data, parents: tuple, vjp: Vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, parents, vjp, requires_grad=True)
    return Tensor(data)


# -- shape plumbing ---------------------------------------------------------

def sum_to(x: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcast result back to ``shape``."""
    if x.shape == tuple(shape):
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])

    def vjp(g, parents, out):
        return (broadcast_to(g, parents[0].shape),)

    return _make(data, (x,), vjp)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    if x.shape == tuple(shape):
        return x

    def vjp(g, parents, out):
        return (sum_to(g, parents[0].shape),)

    return _make(np.broadcast_to(x.data, shape).copy(), (x,), vjp)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def vjp(g, parents, out):
        return (reshape(g, parents[0].shape),)

    return _make(x.data.reshape(shape), (x,), vjp)


def transpose(x: Tensor) -> Tensor:
    def vjp(g, parents, out):
        return (transpose(g),)

    return _make(x.data.T.copy(), (x,), vjp)


def gather_cols(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[:, index]`` for a 2-D ``x`` and an integer index array of any shape."""
    index = np.asarray(index, dtype=np.intp)

    def vjp(g, parents, out):
        return (scatter_cols(g, index, parents[0].shape[1]),)

    return _make(x.data[:, index], (x,), vjp)


def scatter_cols(g: Tensor, index: np.ndarray, width: int) -> Tensor:
    """Adjoint of :func:`gather_cols`: sum ``g`` into ``width`` columns."""
    buf = np.zeros((g.shape[0], width))
    np.add.at(buf, (slice(None), index), g.data)

    def vjp(h, parents, out):
        return (gather_cols(h, index),)

    return _make(buf, (g,), vjp)


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, parents, out):
        return sum_to(g, parents[0].shape), sum_to(g, parents[1].shape)

    return _make(a.data + b.data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g, parents, out):
        return (neg(g),)

    return _make(-a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g, parents, out):
        pa, pb = parents
        return sum_to(mul(g, pb), pa.shape), sum_to(mul(g, pa), pb.shape)

    return _make(a.data * b.data, (a, b), vjp)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)

    def vjp(g, parents, out):
        (x,) = parents
        if p == 1.0:
            return (g,)
        return (mul(g, mul(power(x, p - 1.0), p)),)

    return _make(np.power(a.data, p), (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")

    def vjp(g, parents, out):
        pa, pb = parents
        return matmul(g, transpose(pb)), matmul(transpose(pa), g)

    return _make(a.data @ b.data, (a, b), vjp)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g, parents, out):
        shape = parents[0].shape
        if axis is not None and not keepdims:
            kshape = list(shape)
            for ax in np.atleast_1d(axis):
                kshape[ax] = 1
            g = reshape(g, tuple(kshape))
        elif axis is None:
            g = reshape(g, (1,) * len(shape))
        return (broadcast_to(g, shape),)

    return _make(data, (x,), vjp)


# -- elementwise nonlinearities --------------------------------------------

def exp(x: Tensor) -> Tensor:
    def vjp(g, parents, out):
        return (mul(g, out),)

    return _make(np.exp(x.data), (x,), vjp)


def log(x: Tensor) -> Tensor:
    def vjp(g, parents, out):
        return (mul(g, power(parents[0], -1.0)),)

    return _make(np.log(x.data), (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    def vjp(g, parents, out):
        return (mul(g, add(1.0, neg(mul(out, out)))),)

    return _make(np.tanh(x.data), (x,), vjp)


def relu(x: Tensor) -> Tensor:
    # derivative mask is piecewise constant, so the second derivative is zero
    mask = (x.data > 0).astype(np.float64)

    def vjp(g, parents, out):
        return (mul(g, mask),)

    return _make(x.data * mask, (x,), vjp)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` (kept dims squeezed)."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))
    s = reduce_sum(exp(x - shift), axis=axis, keepdims=True)
    out = log(s) + shift
    shape = tuple(d for i, d in enumerate(out.shape) if i != (axis % x.ndim))
    return reshape(out, shape)


# -- differentiation --------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output: Tensor | None = None,
         create_graph: bool = False) -> list[Tensor]:
    """Vector-Jacobian product of ``output`` with respect to ``inputs``.

    With ``create_graph=True`` the returned tensors are themselves part of a
    differentiable graph; otherwise they are constants.
    Inputs the output does not depend on receive zeros.
    """
    if grad_output is None:
        if output.data.size != 1:
            raise ValueError("grad_output is required for non-scalar outputs")
        grad_output = Tensor(np.ones_like(output.data))
    grads: dict[int, Tensor] = {}
    if output.requires_grad:
        grads[id(output)] = grad_output
    wanted = {id(t) for t in inputs}
    for node in reversed(_toposort(output) if output.requires_grad else []):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        if id(node) not in wanted:
            del grads[id(node)]
        if create_graph:
            parents, out = node.parents, node
        else:
            parents, out = tuple(p.detach() for p in node.parents), node.detach()
        for p, pg in zip(node.parents, node.vjp(g, parents, out)):
            if not p.requires_grad:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else add(prev, pg)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return result


def value_and_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> tuple[float, np.ndarray]:
    """Scalar ``f`` and its gradient at the flat point ``x``."""
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    (g,) = grad(out, [leaf])
    return out.item(), g.data


def hessian_vector_product(f: Callable[[Tensor], Tensor], x: np.ndarray,
                           v: np.ndarray) -> np.ndarray:
    """``H(x) @ v`` for scalar ``f`` by differentiating ``<grad f, v>`` again."""
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    (g,) = grad(f(leaf), [leaf], create_graph=True)
    if not g.requires_grad:
        return np.zeros_like(leaf.data)
    (hv,) = grad((g * np.asarray(v, dtype=np.float64)).sum(), [leaf])
    return hv.data
