"""Second-order jets in the time variable and an adjoint recorder over them.

A :class:`Jet2` bundles a value with its first and second derivative with
respect to the scalar time input.  Fields may be Python floats or numpy
arrays; arrays are treated elementwise, which is how the network evaluates
many collocation points at once.

:class:`AdjointRecorder` records a computation whose node values are jets and
replays it backward with a jet-valued co-state, so a scalar loss that depends
on ``u``, ``u'`` and ``u''`` can be differentiated exactly with respect to the
trainable parameters without nesting derivative passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

Number = Union[float, np.ndarray]


class DivergenceError(FloatingPointError):
    """A non-finite value appeared in a loss, gradient or parameter update."""

    def __init__(self, message: str, iteration: int | None = None, stage: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.stage = stage


@dataclass(frozen=True)
class Jet2:
    """Truncated Taylor triple ``(v, d1, d2)`` in the time variable."""

    v: Number
    d1: Number = 0.0
    d2: Number = 0.0

    def __iter__(self):
        return iter((self.v, self.d1, self.d2))

    def __add__(self, other):
        o = as_jet(other)
        return Jet2(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.v, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-as_jet(other))

    def __rsub__(self, other):
        return as_jet(other) - self

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, other)
        return Jet2(self.v * other, self.d1 * other, self.d2 * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, jet_pow(other, -1))
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return jet_pow(self, -1) * other

    def __pow__(self, k: int):
        return jet_pow(self, k)

    def tanh(self):
        return jet_tanh(self)

    def exp(self):
        return jet_exp(self)


def as_jet(x) -> Jet2:
    """Promote a constant (float or array) to a jet with zero derivatives."""
    if isinstance(x, Jet2):
        return x
    return Jet2(x, 0.0 * x if isinstance(x, np.ndarray) else 0.0,
                0.0 * x if isinstance(x, np.ndarray) else 0.0)


def lift_input(tau: Number) -> Jet2:
    """Seed the time variable: ``(tau, 1, 0)``."""
    if isinstance(tau, np.ndarray):
        tau = tau.astype(float)
        return Jet2(tau, np.ones_like(tau), np.zeros_like(tau))
    return Jet2(float(tau), 1.0, 0.0)


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(
        a.v * b.v,
        a.d1 * b.v + a.v * b.d1,
        a.d2 * b.v + 2.0 * a.d1 * b.d1 + a.v * b.d2,
    )


def _chain(a: Jet2, f0, f1, f2) -> Jet2:
    # f0, f1, f2: f, f', f'' evaluated at a.v
    return Jet2(f0, f1 * a.d1, f1 * a.d2 + f2 * a.d1 * a.d1)


def jet_tanh(a: Jet2) -> Jet2:
    t = np.tanh(a.v)
    s = 1.0 - t * t
    return _chain(a, t, s, -2.0 * t * s)


def jet_exp(a: Jet2) -> Jet2:
    e = np.exp(a.v)
    return _chain(a, e, e, e)


def jet_pow(a: Jet2, k: int) -> Jet2:
    """Integer power; negative ``k`` requires a nonzero value slot."""
    if int(k) != k:
        raise TypeError("jet_pow supports integer exponents only")
    k = int(k)
    if k == 0:
        return as_jet(a.v * 0.0 + 1.0)
    return _chain(a, a.v ** k, k * a.v ** (k - 1), k * (k - 1) * a.v ** (k - 2) if k != 1 else 0.0 * a.v)


# ---------------------------------------------------------------------------
# adjoint recording
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Node:
    """A recorded jet value.  Arithmetic on nodes records new nodes."""

    __slots__ = ("jet", "rec", "index", "_back", "shape")

    def __init__(self, rec: "AdjointRecorder", jet: Jet2, back: Callable | None):
        self.rec = rec
        self.jet = jet
        self._back = back
        self.shape = np.shape(jet.v)
        self.index = len(rec._nodes)
        rec._nodes.append(self)

    @property
    def v(self):
        return self.jet.v

    @property
    def d1(self):
        return self.jet.d1

    @property
    def d2(self):
        return self.jet.d2

    def __add__(self, other):
        return self.rec.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        neg = self.rec.scale(other, -1.0) if isinstance(other, Node) else -np.asarray(other, dtype=float)
        return self.rec.add(self, neg)

    def __rsub__(self, other):
        return self.rec.add(self.rec.scale(self, -1.0), other)

    def __neg__(self):
        return self.rec.scale(self, -1.0)

    def __mul__(self, other):
        return self.rec.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return self.rec.mul(self, self.rec.power(other, -1))
        return self.rec.mul(self, 1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.rec.mul(self.rec.power(self, -1), other)

    def __pow__(self, k: int):
        return self.rec.power(self, k)

    def __getitem__(self, i):
        return self.rec.column(self, i)

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.shape})"


class AdjointRecorder:
    """Tape of jet-valued operations with reverse replay.

    Every ``param`` leaf is a trainable quantity whose jet is ``(value, 0, 0)``;
    :func:`param_gradient` returns the concatenated gradients of all params in
    registration order.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._params: list[Node] = []

    # -- leaves -----------------------------------------------------------
    def param(self, value) -> Node:
        value = np.array(value, dtype=float)
        node = Node(self, Jet2(value, np.zeros_like(value), np.zeros_like(value)), None)
        self._params.append(node)
        return node

    def constant(self, value) -> Node:
        jet = value if isinstance(value, Jet2) else as_jet(np.asarray(value, dtype=float))
        return Node(self, jet, None)

    @property
    def params(self) -> list[Node]:
        return list(self._params)

    def _node(self, x) -> Node:
        if isinstance(x, Node):
            if x.rec is not self:
                raise ValueError("node belongs to a different recorder")
            return x
        return self.constant(x)

    # -- operations -------------------------------------------------------
    def add(self, a, b) -> Node:
        a, b = self._node(a), self._node(b)
        sa, sb = a.shape, b.shape

        def back(g, acc):
            acc(a, [_unbroadcast(gk, sa) for gk in g])
            acc(b, [_unbroadcast(gk, sb) for gk in g])

        return Node(self, a.jet + b.jet, back)

    def scale(self, a: Node, c: float) -> Node:
        a = self._node(a)

        def back(g, acc):
            acc(a, [gk * c for gk in g])

        return Node(self, a.jet * c, back)

    def mul(self, a, b) -> Node:
        a, b = self._node(a), self._node(b)
        sa, sb = a.shape, b.shape
        av, a1, a2 = a.jet
        bv, b1, b2 = b.jet

        def back(g, acc):
            gv, g1, g2 = g
            acc(a, [
                _unbroadcast(gv * bv + g1 * b1 + g2 * b2, sa),
                _unbroadcast(g1 * bv + 2.0 * g2 * b1, sa),
                _unbroadcast(g2 * bv, sa),
            ])
            acc(b, [
                _unbroadcast(gv * av + g1 * a1 + g2 * a2, sb),
                _unbroadcast(g1 * av + 2.0 * g2 * a1, sb),
                _unbroadcast(g2 * av, sb),
            ])

        return Node(self, jet_mul(a.jet, b.jet), back)

    def _unary(self, a: Node, f0, f1, f2, f3) -> Node:
        a = self._node(a)
        _, x1, x2 = a.jet

        def back(g, acc):
            gv, g1, g2 = g
            acc(a, [
                gv * f1 + g1 * f2 * x1 + g2 * (f3 * x1 * x1 + f2 * x2),
                g1 * f1 + 2.0 * g2 * f2 * x1,
                g2 * f1,
            ])

        return Node(self, _chain(a.jet, f0, f1, f2), back)

    def tanh(self, a: Node) -> Node:
        t = np.tanh(a.v)
        s = 1.0 - t * t
        return self._unary(a, t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t))

    def exp(self, a: Node) -> Node:
        e = np.exp(a.v)
        return self._unary(a, e, e, e, e)

    def power(self, a: Node, k: int) -> Node:
        if int(k) != k:
            raise TypeError("power supports integer exponents only")
        k = int(k)
        x = np.asarray(a.v, dtype=float)
        coef = [1.0, k, k * (k - 1), k * (k - 1) * (k - 2)]
        fs = [c * x ** (k - i) if c != 0 else np.zeros_like(x) for i, c in enumerate(coef)]
        return self._unary(a, *fs)

    def linear(self, x: Node, W: Node, b: Node) -> Node:
        """``x @ W + b`` where ``W`` and ``b`` are constant in time."""
        xv, x1, x2 = x.jet
        Wv = W.v
        jet = Jet2(xv @ Wv + b.v, x1 @ Wv, x2 @ Wv)

        def back(g, acc):
            gv, g1, g2 = g
            WT = Wv.T
            acc(x, [gv @ WT, g1 @ WT, g2 @ WT])
            acc(W, [xv.T @ gv + x1.T @ g1 + x2.T @ g2, None, None])
            acc(b, [gv.sum(axis=0), None, None])

        return Node(self, jet, back)

    def stack(self, parts: list) -> Node:
        """Stack same-shape nodes along a new trailing axis."""
        parts = [self._node(p) for p in parts]
        shape = parts[0].shape
        jet = Jet2(*(np.stack([np.broadcast_to(tuple(p.jet)[k], shape) for p in parts], axis=-1)
                     for k in range(3)))

        def back(g, acc):
            for i, p in enumerate(parts):
                acc(p, [_unbroadcast(gk[..., i], p.shape) for gk in g])

        return Node(self, jet, back)

    def column(self, a: Node, i: int) -> Node:
        a = self._node(a)

        def back(g, acc):
            out = []
            for gk in g:
                full = np.zeros(a.shape)
                full[..., i] = gk
                out.append(full)
            acc(a, out)

        return Node(self, Jet2(a.v[..., i], a.d1[..., i], a.d2[..., i]), back)

    def take(self, a: Node, key) -> Node:
        """Basic indexing (ints and slices) of a node."""
        a = self._node(a)

        def back(g, acc):
            out = []
            for gk in g:
                full = np.zeros(a.shape)
                full[key] = gk
                out.append(full)
            acc(a, out)

        return Node(self, Jet2(a.v[key], a.d1[key], a.d2[key]), back)

    def slot(self, a: Node, k: int) -> Node:
        """Promote derivative slot ``k`` (0, 1 or 2) to a time-constant jet.

        The result is what a residual consumes: ``u``, ``u'`` or ``u''`` as a
        plain value whose own time derivatives are not needed.
        """
        a = self._node(a)
        val = tuple(a.jet)[k]
        zeros = np.zeros_like(np.asarray(val, dtype=float))

        def back(g, acc):
            out = [None, None, None]
            out[k] = g[0]
            acc(a, out)

        return Node(self, Jet2(val, zeros, zeros), back)

    def sum(self, a: Node) -> Node:
        a = self._node(a)
        shape = a.shape

        def back(g, acc):
            acc(a, [np.broadcast_to(gk, shape) for gk in g])

        return Node(self, Jet2(*(np.sum(c) for c in a.jet)), back)

    # -- replay -----------------------------------------------------------
    def backward(self, out: Node) -> dict[int, list]:
        """Replay the tape from scalar ``out`` (value slot seeded with 1)."""
        if out.rec is not self:
            raise ValueError("output node belongs to a different recorder")
        if np.size(out.v) != 1:
            raise ValueError("backward needs a scalar output")
        if not np.isfinite(out.v):
            raise DivergenceError(f"non-finite loss value {float(out.v)!r}")
        adj: dict[int, list] = {out.index: [np.ones(out.shape), np.zeros(out.shape), np.zeros(out.shape)]}

        def acc(node: Node, grads):
            slot = adj.get(node.index)
            if slot is None:
                slot = adj[node.index] = [None, None, None]
            for k, gk in enumerate(grads):
                if gk is None:
                    continue
                slot[k] = gk if slot[k] is None else slot[k] + gk

        for node in reversed(self._nodes[: out.index + 1]):
            g = adj.get(node.index)
            if g is None or node._back is None:
                continue
            full = [gk if gk is not None else np.zeros(node.shape) for gk in g]
            node._back(full, acc)
        return adj


def param_gradient(recorder: AdjointRecorder, loss: Node) -> np.ndarray:
    """Gradient of scalar ``loss`` with respect to every recorded param.

    Params are concatenated (flattened, C order) in registration order; params
    that do not influence the loss receive zeros.
    """
    adj = recorder.backward(loss)
    parts = []
    for p in recorder._params:
        g = adj.get(p.index)
        gv = None if g is None else g[0]
        parts.append(np.zeros(np.size(p.v)) if gv is None else np.ravel(np.asarray(gv, dtype=float)))
    grad = np.concatenate(parts) if parts else np.zeros(0)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient during adjoint replay")
    return grad
