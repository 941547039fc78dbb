"""Exact derivatives for network evaluation and training.

Two mechanisms are combined:

* :class:`HyperDual` carries ``(value, d1, d2)`` along one seeded input
  direction, giving first and second derivatives in space/time exactly.
* :class:`Tape` records array operations in evaluation order so one
  reverse sweep yields the gradient of a scalar loss with respect to the
  network parameters.

The components of a :class:`HyperDual` may themselves be floats, numpy
arrays (a batch of points) or tape :class:`Node` objects, so the loss
assembled from hyper-dual outputs is recorded on the tape as well.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, UsageError


def _unbroadcast(grad, shape):
    if np.shape(grad) == tuple(shape):
        return grad
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Node:
    """A value recorded on a :class:`Tape`."""

    __array_ufunc__ = None  # keep numpy from turning `ndarray * Node` into object arrays
    __slots__ = ("value", "tape", "parents", "backward", "grad")

    def __init__(self, value, tape: "Tape", parents=(), backward=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward = backward
        self.grad = None
        tape.records.append(self)

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node(shape={self.shape})"

    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    # arithmetic ---------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Records :class:`Node` operations in evaluation order.

    Each training worker owns its own tape; tapes are never shared.
    """

    def __init__(self):
        self.records: list[Node] = []

    def variable(self, value) -> Node:
        return Node(np.array(value, dtype=np.float64), self)

    def gradient(self, loss: Node, wrt: Node) -> np.ndarray:
        if not self.records:
            raise UsageError("gradient requested on an empty tape")
        if not isinstance(loss, Node) or loss.tape is not self:
            # loss does not depend on anything recorded here
            return np.zeros_like(wrt.value)
        if np.size(loss.value) != 1:
            raise UsageError("loss must be a scalar")
        for node in self.records:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.records):
            if node.grad is None or node.backward is None:
                continue
            node.backward(node.grad)
        g = wrt.grad
        return np.zeros_like(wrt.value) if g is None else np.array(g, dtype=np.float64)


def grad_wrt_params(loss, params: Node) -> np.ndarray:
    """Gradient of a recorded scalar ``loss`` with respect to ``params``.

    Parameters never touched by the forward pass receive exactly zero.
    """
    tape = params.tape
    return tape.gradient(loss, params)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise UsageError("operands recorded on different tapes")
    return tape


def _val(x):
    return x.value if isinstance(x, Node) else x


# primitive tape operations ----------------------------------------------------


def add(a, b):
    if isinstance(a, HyperDual) or isinstance(b, HyperDual):
        return NotImplemented
    tape = _tape_of(a, b)
    if tape is None:
        return a + b
    out = Node(_val(a) + _val(b), tape, (a, b))

    def backward(g):
        if isinstance(a, Node):
            a._accumulate(_unbroadcast(g, a.shape))
        if isinstance(b, Node):
            b._accumulate(_unbroadcast(g, b.shape))

    out.backward = backward
    return out


def sub(a, b):
    if isinstance(a, HyperDual) or isinstance(b, HyperDual):
        return NotImplemented
    tape = _tape_of(a, b)
    if tape is None:
        return a - b
    out = Node(_val(a) - _val(b), tape, (a, b))

    def backward(g):
        if isinstance(a, Node):
            a._accumulate(_unbroadcast(g, a.shape))
        if isinstance(b, Node):
            b._accumulate(_unbroadcast(-g, b.shape))

    out.backward = backward
    return out


def mul(a, b):
    if isinstance(a, HyperDual) or isinstance(b, HyperDual):
        return NotImplemented
    tape = _tape_of(a, b)
    if tape is None:
        return a * b
    av, bv = _val(a), _val(b)
    out = Node(av * bv, tape, (a, b))

    def backward(g):
        if isinstance(a, Node):
            a._accumulate(_unbroadcast(g * bv, a.shape))
        if isinstance(b, Node):
            b._accumulate(_unbroadcast(g * av, b.shape))

    out.backward = backward
    return out


def div(a, b):
    if isinstance(a, HyperDual) or isinstance(b, HyperDual):
        return NotImplemented
    bv = _val(b)
    if np.any(np.asarray(bv) == 0):
        raise NumericError("div", "division by zero")
    tape = _tape_of(a, b)
    if tape is None:
        return a / b
    av = _val(a)
    out = Node(av / bv, tape, (a, b))

    def backward(g):
        if isinstance(a, Node):
            a._accumulate(_unbroadcast(g / bv, a.shape))
        if isinstance(b, Node):
            b._accumulate(_unbroadcast(-g * av / (bv * bv), b.shape))

    out.backward = backward
    return out


def neg(a):
    if not isinstance(a, Node):
        return -a
    out = Node(-a.value, a.tape, (a,))
    out.backward = lambda g: a._accumulate(-g)
    return out


def matmul(a, b):
    tape = _tape_of(a, b)
    if tape is None:
        return a @ b
    av, bv = _val(a), _val(b)
    out = Node(av @ bv, tape, (a, b))

    def backward(g):
        if isinstance(a, Node):
            ga = g @ np.swapaxes(bv, -1, -2) if np.ndim(bv) > 1 else np.multiply.outer(g, bv)
            a._accumulate(ga)
        if isinstance(b, Node):
            if np.ndim(av) == 1:
                b._accumulate(np.multiply.outer(av, g))
            else:
                b._accumulate(np.swapaxes(av, -1, -2) @ g)

    out.backward = backward
    return out


def getitem(a, key):
    if not isinstance(a, Node):
        return a[key]
    out = Node(a.value[key], a.tape, (a,))

    basic = isinstance(key, (int, slice)) or (
        isinstance(key, tuple) and all(isinstance(k, (int, slice)) or k is Ellipsis for k in key)
    )

    def backward(g):
        full = np.zeros_like(a.value)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        a._accumulate(full)

    out.backward = backward
    return out


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.reshape(a, shape)
    out = Node(np.reshape(a.value, shape), a.tape, (a,))
    out.backward = lambda g: a._accumulate(np.reshape(g, a.shape))
    return out


def total(a):
    """Sum of all entries."""
    if not isinstance(a, Node):
        return np.sum(a)
    out = Node(np.sum(a.value), a.tape, (a,))
    out.backward = lambda g: a._accumulate(np.broadcast_to(g, a.shape).copy())
    return out


def mean(a):
    n = np.size(_val(a))
    if n == 0:
        raise UsageError("mean of an empty array")
    return total(a) * (1.0 / n)


def segment_sum(a, segments: np.ndarray, n: int):
    """``out[k] = sum(a[segments == k])`` for ``k < n``."""
    if not isinstance(a, Node):
        out = np.zeros(n)
        np.add.at(out, segments, a)
        return out
    value = np.zeros(n)
    np.add.at(value, segments, a.value)
    out = Node(value, a.tape, (a,))
    out.backward = lambda g: a._accumulate(g[segments])
    return out


def _unary(x, f, df):
    """Record ``f(x)`` whose derivative, given ``(x, f(x))``, is ``df``."""
    if not isinstance(x, Node):
        return f(x)
    y = f(x.value)
    out = Node(y, x.tape, (x,))
    out.backward = lambda g: x._accumulate(g * df(x.value, y))
    return out


# elementary functions, dispatched over HyperDual / Node / plain numbers ------


def _check_finite(op, v):
    if not np.all(np.isfinite(_val(v))):
        raise NumericError(op, "non-finite argument")


def _tanh_plain(x):
    return _unary(x, np.tanh, lambda v, y: 1.0 - y * y)


def _sigmoid_fn(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def _sigmoid_plain(x):
    return _unary(x, _sigmoid_fn, lambda v, y: y * (1.0 - y))


def _exp_plain(x):
    with np.errstate(over="ignore"):
        out = _unary(x, np.exp, lambda v, y: y)
    if not np.all(np.isfinite(_val(out))):
        raise NumericError("exp", "overflow")
    return out


def _cos_plain(x):
    return _unary(x, np.cos, lambda v, y: -np.sin(v))


def _sin_plain(x):
    return _unary(x, np.sin, lambda v, y: np.cos(v))


def tanh(x):
    if isinstance(x, HyperDual):
        _check_finite("tanh", x.value)
        s = _tanh_plain(x.value)
        ds = 1.0 - s * s
        return x._chain(s, ds, -2.0 * s * ds)
    _check_finite("tanh", x)
    return _tanh_plain(x)


def sigmoid(x):
    if isinstance(x, HyperDual):
        _check_finite("sigmoid", x.value)
        s = _sigmoid_plain(x.value)
        ds = s * (1.0 - s)
        return x._chain(s, ds, ds * (1.0 - 2.0 * s))
    _check_finite("sigmoid", x)
    return _sigmoid_plain(x)


def exp(x):
    if isinstance(x, HyperDual):
        e = _exp_plain(x.value)
        return x._chain(e, e, e)
    return _exp_plain(x)


def cos(x):
    if isinstance(x, HyperDual):
        c = _cos_plain(x.value)
        s = _sin_plain(x.value)
        return x._chain(c, -s, -c)
    return _cos_plain(x)


def sin(x):
    if isinstance(x, HyperDual):
        s = _sin_plain(x.value)
        c = _cos_plain(x.value)
        return x._chain(s, c, -s)
    return _sin_plain(x)


ACTIVATIONS: dict[str, Callable] = {"tanh": tanh, "sigmoid": sigmoid}


def value_of(x):
    """Strip hyper-dual and tape wrappers down to a plain number/array."""
    if isinstance(x, HyperDual):
        x = x.value
    return _val(x)


class HyperDual:
    """Value with exact first and second derivatives along one direction.

    Composition follows Taylor propagation: for ``h = g(f)``,
    ``h.d1 = g'(f) f.d1`` and ``h.d2 = g''(f) f.d1**2 + g'(f) f.d2``.
    """

    __array_ufunc__ = None
    __slots__ = ("value", "d1", "d2")

    def __init__(self, value, d1=0.0, d2=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2

    def __repr__(self):
        return f"HyperDual({value_of(self.value)!r}, {value_of(self.d1)!r}, {value_of(self.d2)!r})"

    def _chain(self, g, dg, ddg):
        d1 = dg * self.d1
        d2 = ddg * (self.d1 * self.d1) + dg * self.d2
        return HyperDual(g, d1, d2)

    @staticmethod
    def lift(x) -> "HyperDual":
        return x if isinstance(x, HyperDual) else HyperDual(x, 0.0, 0.0)

    def __add__(self, other):
        o = HyperDual.lift(other)
        return HyperDual(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = HyperDual.lift(other)
        return HyperDual(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        return HyperDual.lift(other) - self

    def __neg__(self):
        return HyperDual(-self.value, -self.d1, -self.d2)

    def __mul__(self, other):
        if not isinstance(other, HyperDual):
            return HyperDual(self.value * other, self.d1 * other, self.d2 * other)
        a, b = self, other
        return HyperDual(
            a.value * b.value,
            a.d1 * b.value + a.value * b.d1,
            a.d2 * b.value + 2.0 * (a.d1 * b.d1) + a.value * b.d2,
        )

    __rmul__ = __mul__

    def reciprocal(self):
        v = value_of(self.value)
        if np.any(np.asarray(v) == 0):
            raise NumericError("div", "division by zero")
        inv = 1.0 / self.value
        inv2 = inv * inv
        return self._chain(inv, -inv2, 2.0 * inv2 * inv)

    def __truediv__(self, other):
        if not isinstance(other, HyperDual):
            if np.any(np.asarray(value_of(other)) == 0):
                raise NumericError("div", "division by zero")
            inv = 1.0 / other
            return HyperDual(self.value * inv, self.d1 * inv, self.d2 * inv)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return HyperDual.lift(other) * self.reciprocal()

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise UsageError("only non-negative integer powers are supported")
        out = HyperDual(1.0)
        for _ in range(n):
            out = out * self
        return out


def seed_coordinate(point: Sequence, axis: int) -> list[HyperDual]:
    """Lift ``point`` to hyper-duals, seeding coordinate ``axis``.

    Components may be scalars or equally shaped arrays (a batch of points).
    """
    n = len(point)
    if not 0 <= axis < n:
        raise UsageError(f"axis {axis} out of range for a {n}-dimensional point")
    out = []
    for i, c in enumerate(point):
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 0:
            c = float(c)
        if i == axis:
            one = 1.0 if np.ndim(c) == 0 else np.ones_like(c)
            out.append(HyperDual(c, one, 0.0))
        else:
            out.append(HyperDual(c, 0.0, 0.0))
    return out


def affine(x: HyperDual | np.ndarray | Node, weight, bias):
    """``x @ weight + bias`` for a batch of row vectors.

    Derivative parts pass through the linear map without the bias.
    """
    if isinstance(x, HyperDual):
        d1 = 0.0 if np.ndim(value_of(x.d1)) == 0 and value_of(x.d1) == 0 else x.d1 @ weight
        d2 = 0.0 if np.ndim(value_of(x.d2)) == 0 and value_of(x.d2) == 0 else x.d2 @ weight
        return HyperDual(x.value @ weight + bias, d1, d2)
    return x @ weight + bias


def stack_columns(coords: Sequence[HyperDual]) -> HyperDual:
    """Stack per-coordinate hyper-duals into one with ``(n, d)`` components."""
    n = None
    for c in coords:
        if np.ndim(value_of(c.value)) > 0:
            n = np.shape(value_of(c.value))[0]
            break

    def col(part):
        v = np.asarray(part, dtype=np.float64)
        if n is None:
            return np.reshape(v, (1,))
        return np.broadcast_to(v, (n,))

    def part(name):
        parts = [getattr(c, name) for c in coords]
        if any(isinstance(p, Node) for p in parts):
            raise UsageError("network inputs must not be recorded on a tape")
        if all(np.ndim(p) == 0 and p == 0 for p in parts):
            return 0.0
        m = np.stack([col(p) for p in parts], axis=-1)
        return m if n is not None else m[0]

    return HyperDual(part("value"), part("d1"), part("d2"))


def central_difference(f: Callable[[float], float], x: float, h: float = 1e-4) -> tuple[float, float]:
    """First and second central differences of a scalar function."""
    fp, f0, fm = f(x + h), f(x), f(x - h)
    return (fp - fm) / (2.0 * h), (fp - 2.0 * f0 + fm) / (h * h)


__all__ = [
    "ACTIVATIONS",
    "HyperDual",
    "Node",
    "NumericError",
    "Tape",
    "UsageError",
    "affine",
    "central_difference",
    "cos",
    "exp",
    "grad_wrt_params",
    "mean",
    "seed_coordinate",
    "segment_sum",
    "sigmoid",
    "sin",
    "stack_columns",
    "tanh",
    "total",
    "value_of",
]

