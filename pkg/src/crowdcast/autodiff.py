"""Tape-based reverse-mode automatic differentiation on float64 numpy arrays.

Usage::

    with Tape() as tape:
        w = tape.variable(np.zeros(3))
        y = ad.sum(ad.tanh(w * x))
    grads = backward(y)          # {node id: ndarray}
    grads[w.id]

Operations only record onto a tape when at least one input is tracked, so the
same model code runs untracked (plain forward evaluation) at lower cost.
"""

import itertools
import threading

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteValue, NotScalarOutput, ShapeMismatch

SQRT_EPS = 1e-12

_local = threading.local()


class Tensor:
    __slots__ = ("value", "id", "tape")

    def __init__(self, value, id=None, tape=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.id = id
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def tracked(self):
        return self.id is not None

    def __repr__(self):
        tag = f"id={self.id}" if self.tracked else "const"
        return f"Tensor({tag}, shape={self.shape})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class _Node:
    __slots__ = ("out_id", "inputs", "vjp")

    def __init__(self, out_id, inputs, vjp):
        self.out_id = out_id
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications.

    Node ids are strictly increasing and every node is appended after its
    inputs exist, so the list order is already topological.
    """

    def __init__(self):
        self.nodes = []
        self._ids = itertools.count(1)

    def _next_id(self):
        return next(self._ids)

    def variable(self, value):
        """Register ``value`` as a tracked leaf."""
        return Tensor(value, id=self._next_id(), tape=self)

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def gradient(self, output):
        return backward(output)


def current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(value, op):
    if not np.isfinite(value).all():
        raise NonFiniteValue(f"{op} produced a non-finite value")


def _record(op, value, inputs, vjp):
    _check_finite(value, op)
    tape = None
    for t in inputs:
        if t.id is not None:
            tape = t.tape
            break
    if tape is None:
        return Tensor(value)
    out = Tensor(value, id=tape._next_id(), tape=tape)
    tape.nodes.append(_Node(out.id, inputs, vjp))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


def backward(output):
    """Gradients of a scalar ``output`` with respect to every tracked node.

    Returns a dict mapping node id to an ndarray of the node's shape.
    Nodes the output does not depend on are absent.
    """
    output = as_tensor(output)
    if output.value.size != 1 or output.ndim > 1:
        raise NotScalarOutput(f"backward needs a scalar output, got shape {output.shape}")
    if output.id is None:
        return {}
    tape = output.tape
    grads = {output.id: np.ones_like(output.value)}
    for node in reversed(tape.nodes):
        if node.out_id > output.id:
            continue
        g = grads.get(node.out_id)
        if g is None:
            continue
        needs = tuple(t.id is not None and t.tape is tape for t in node.inputs)
        for t, need, gi in zip(node.inputs, needs, node.vjp(g, needs)):
            if not need:
                continue
            prev = grads.get(t.id)
            grads[t.id] = gi if prev is None else prev + gi
    return grads


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return _record("add", a.value + b.value, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return _record("sub", a.value - b.value, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value

    def vjp(g, needs):
        return (_unbroadcast(g * bv, av.shape) if needs[0] else None,
                _unbroadcast(g * av, bv.shape) if needs[1] else None)

    return _record("mul", av * bv, (a, b), vjp)


def square(x):
    x = as_tensor(x)
    xv = x.value
    return _record("square", xv * xv, (x,), lambda g, needs: (2.0 * xv * g,))


def sqrt_eps(x, eps=SQRT_EPS):
    """sqrt(x + eps); the offset keeps the derivative finite at x = 0."""
    x = as_tensor(x)
    arg = x.value + eps
    if (arg < 0).any():
        raise NonFiniteValue("sqrt_eps of a negative argument")
    out = np.sqrt(arg)

    def vjp(g, needs):
        with np.errstate(divide="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _record("sqrt_eps", out, (x,), vjp)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.value)
    return _record("tanh", out, (x,), lambda g, needs: (g * (1.0 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    # tanh form avoids exp overflow for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _record("sigmoid", out, (x,), lambda g, needs: (g * out * (1.0 - out),))


def relu(x):
    return clamp_min(x, 0.0)


def clamp_min(x, lo):
    """max(x, lo). The kink gets subgradient 0 (inactive branch)."""
    x = as_tensor(x)
    active = x.value > lo
    out = np.where(active, x.value, lo)
    return _record("clamp_min", out, (x,), lambda g, needs: (g * active,))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 1-D or 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0 or bv.ndim > 2 or av.shape[-1] != bv.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {av.shape} and {bv.shape} do not conform")
    out = av @ bv
    b2 = bv if bv.ndim == 2 else bv[:, None]

    def vjp(g, needs):
        g2 = g if bv.ndim == 2 else g[..., None]
        ga = gb = None
        if needs[0]:
            ga = g2 @ b2.T
            if bv.ndim == 1:
                ga = ga.reshape(av.shape)
        if needs[1]:
            a2 = av.reshape(1, -1) if av.ndim == 1 else av.reshape(-1, av.shape[-1])
            gb = a2.T @ g2.reshape(-1, b2.shape[1])
            if bv.ndim == 1:
                gb = gb[:, 0]
        return ga, gb

    return _record("matmul", out, (a, b), vjp)


def sparse_matmul(s, x):
    """Product of a constant scipy sparse matrix with a tensor."""
    x = as_tensor(x)
    if not sp.issparse(s):
        raise TypeError("sparse_matmul expects a scipy sparse matrix")
    if s.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"sparse_matmul: {s.shape} and {x.shape} do not conform")

    def vjp(g, needs):
        return (np.asarray(s.T @ g),)

    return _record("sparse_matmul", np.asarray(s @ x.value), (x,), vjp)


# -- structural --------------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def vjp(g, needs):
        parts = []
        for k, need in enumerate(needs):
            if need:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(bounds[k], bounds[k + 1])
                parts.append(g[tuple(idx)])
            else:
                parts.append(None)
        return parts

    return _record("concat", out, tensors, vjp)


def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {exc}") from None

    def vjp(g, needs):
        pieces = np.moveaxis(g, axis, 0)
        return [pieces[k] if need else None for k, need in enumerate(needs)]

    return _record("stack", out, tensors, vjp)


def slice_(x, key):
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    try:
        out = x.value[key]
    except IndexError as exc:
        raise ShapeMismatch(f"slice: {exc}") from None
    shape = x.shape

    def vjp(g, needs):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _record("slice", np.array(out), (x,), vjp)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {exc}") from None
    orig = x.shape
    return _record("reshape", out, (x,), lambda g, needs: (g.reshape(orig),))


def gather_rows(x, index):
    """x[index] along axis 0 with an integer index array (repeats allowed)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def vjp(g, needs):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _record("gather_rows", x.value[index], (x,), vjp)


# -- reductions --------------------------------------------------------------

def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    out = x.value.sum(axis=axis)

    def vjp(g, needs):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", out, (x,), vjp)


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis), 1.0 / n)


# -- verification -------------------------------------------------------------

def finite_difference_check(f, x, h=1e-5):
    """Compare backward() against central differences of ``f`` at ``x``.

    Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    x0 = np.array(x.value if isinstance(x, Tensor) else x, dtype=np.float64)
    with Tape() as tape:
        xv = tape.variable(x0)
        y = f(xv)
    grads = backward(y)
    analytic = grads.get(xv.id, np.zeros_like(x0))
    numeric = np.empty_like(x0)
    for k in np.ndindex(x0.shape):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += h
        xm[k] -= h
        fp = float(f(Tensor(xp)).value)
        fm = float(f(Tensor(xm)).value)
        numeric[k] = (fp - fm) / (2.0 * h)
    if x0.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
