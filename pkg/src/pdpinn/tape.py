"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Var` wraps a float64 ndarray and records the operation that produced
it, so that calling :meth:`Var.backward` on a scalar result accumulates exact
gradients into every upstream node. Nodes are created per *array* operation
(one matmul is one node), which keeps graphs small enough to rebuild on every
training step.

Two subgradient conventions are fixed here and relied on elsewhere:

* ``relu`` propagates 0 at exactly 0;
* ``sqrt`` propagates 0 at exactly 0 (instead of the +inf limit), so that
  quantities like effective strains of an identically-zero field are
  stationary rather than poisoned.

Gradient accumulation follows the (deterministic) graph construction order,
so repeated runs produce bitwise-identical results.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, PoisonedGradientError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """One node of the computation graph: an ndarray value plus backward rule."""

    __slots__ = ("value", "grad", "op", "_parents", "_bw")

    def __init__(self, value, op: str = "leaf", parents: Sequence["Var"] = (),
                 bw: Optional[Callable[[Array], None]] = None):
        self.value: Array = np.asarray(value, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.op = op
        self._parents = tuple(parents)
        self._bw = bw

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    def accum(self, g: Array) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        a, b = self, as_var(other)

        def bw(g):
            a.accum(_unbroadcast(g, a.value.shape))
            b.accum(_unbroadcast(g, b.value.shape))

        return Var(a.value + b.value, "add", (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Var(-a.value, "neg", (a,), lambda g: a.accum(-g))

    def __sub__(self, other):
        a, b = self, as_var(other)

        def bw(g):
            a.accum(_unbroadcast(g, a.value.shape))
            b.accum(_unbroadcast(-g, b.value.shape))

        return Var(a.value - b.value, "sub", (a, b), bw)

    def __rsub__(self, other):
        return as_var(other).__sub__(self)

    def __mul__(self, other):
        a, b = self, as_var(other)

        def bw(g):
            a.accum(_unbroadcast(g * b.value, a.value.shape))
            b.accum(_unbroadcast(g * a.value, b.value.shape))

        return Var(a.value * b.value, "mul", (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_var(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.value / b.value

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                a.accum(_unbroadcast(g / b.value, a.value.shape))
                b.accum(_unbroadcast(-g * a.value / (b.value * b.value),
                                     b.value.shape))

        return Var(out, "div", (a, b), bw)

    def __rtruediv__(self, other):
        return as_var(other).__truediv__(self)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Var):
            raise InvalidArgumentError("only constant exponents are supported")
        a, p = self, float(exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.value ** p

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                a.accum(g * p * a.value ** (p - 1.0))

        return Var(out, "pow", (a,), bw)

    def __matmul__(self, other):
        a, b = self, as_var(other)
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise InvalidArgumentError("matmul expects 2-D operands")

        def bw(g):
            a.accum(g @ b.value.T)
            b.accum(a.value.T @ g)

        return Var(a.value @ b.value, "matmul", (a, b), bw)

    def __getitem__(self, key):
        a = self
        fancy = isinstance(key, np.ndarray) or (
            isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
        )

        def bw(g):
            buf = np.zeros_like(a.value)
            if fancy:
                np.add.at(buf, key, g)
            else:
                buf[key] += g
            a.accum(buf)

        return Var(a.value[key], "slice", (a,), bw)

    # -- reductions / shape ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = a.value.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.accum(np.broadcast_to(g, a.value.shape).copy())

        return Var(out, "sum", (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        a = self
        orig = a.value.shape
        return Var(a.value.reshape(*shape), "reshape", (a,),
                   lambda g: a.accum(g.reshape(orig)))

    @property
    def T(self):
        a = self
        return Var(a.value.T, "transpose", (a,), lambda g: a.accum(g.T))

    # -- reverse pass --------------------------------------------------------

    def _toposort(self) -> list:
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, ready = stack.pop()
            if ready:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` for every upstream node.

        ``self`` must hold a single scalar. Gradients add into any existing
        ``grad`` arrays, so call :func:`zero_grads` between training steps.
        """
        if self.value.size != 1:
            raise InvalidArgumentError(
                f"backward requires a scalar root, got shape {self.value.shape}"
            )
        order = self._toposort()
        self.accum(np.ones_like(self.value))
        for node in reversed(order):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    def check_gradients(self) -> None:
        """Raise :class:`PoisonedGradientError` if any reachable gradient is non-finite.

        Call after :meth:`backward`. The error names the operation whose
        backward rule first produced the non-finite value (the consumers of
        the first poisoned node, in backward order).
        """
        order = self._toposort()
        for node in reversed(order):
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                culprits = sorted({c.op for c in order
                                   if any(p is node for p in c._parents)})
                source = (f"the backward rule of {'/'.join(culprits)!s}"
                          if culprits else "the loss seed")
                raise PoisonedGradientError(
                    f"non-finite gradient first appeared on a {node.op!r} node "
                    f"of shape {node.value.shape}, produced by {source}"
                )


def as_var(x) -> Var:
    """Wrap plain numbers/arrays as constant leaves; pass Vars through."""
    return x if isinstance(x, Var) else Var(x, op="const")


def zero_grads(nodes: Iterable[Var]) -> None:
    for node in nodes:
        node.grad = None


# -- elementwise nonlinearities ---------------------------------------------

def tanh(x) -> Var:
    a = as_var(x)
    t = np.tanh(a.value)
    out = Var(t, "tanh", (a,))
    out._bw = lambda g: a.accum(g * (1.0 - t * t))
    return out


def exp(x) -> Var:
    a = as_var(x)
    with np.errstate(over="ignore"):
        e = np.exp(a.value)
    out = Var(e, "exp", (a,))
    out._bw = lambda g: a.accum(g * e)
    return out


def log(x) -> Var:
    a = as_var(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Var(np.log(a.value), "log", (a,))

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            a.accum(g / a.value)

    out._bw = bw
    return out


def sqrt(x) -> Var:
    """Square root with subgradient 0 at exactly 0 (see module docstring)."""
    a = as_var(x)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(a.value)
    out = Var(s, "sqrt", (a,))

    def bw(g):
        positive = a.value > 0.0
        denom = np.where(positive, s, 1.0)
        a.accum(g * np.where(positive, 0.5 / denom, 0.0))

    out._bw = bw
    return out


def relu(x) -> Var:
    """max(x, 0) with subgradient 0 at exactly 0."""
    a = as_var(x)
    out = Var(np.maximum(a.value, 0.0), "relu", (a,))
    out._bw = lambda g: a.accum(g * (a.value > 0.0))
    return out


def softplus(x) -> Var:
    """log(1 + exp(x)), computed stably; derivative is the logistic sigmoid."""
    a = as_var(x)
    out = Var(np.logaddexp(0.0, a.value), "softplus", (a,))

    def bw(g):
        v = a.value
        with np.errstate(over="ignore"):
            sig = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                           np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
        a.accum(g * sig)

    out._bw = bw
    return out


def where(mask: np.ndarray, a, b) -> Var:
    """Elementwise select by a constant boolean mask (mask is not differentiated)."""
    mask = np.asarray(mask, dtype=bool)
    va, vb = as_var(a), as_var(b)

    def bw(g):
        va.accum(_unbroadcast(g * mask, va.value.shape))
        vb.accum(_unbroadcast(g * ~mask, vb.value.shape))

    return Var(np.where(mask, va.value, vb.value), "where", (va, vb), bw)
