"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active, and that touch at least
one tracked tensor (a trainable leaf or the result of a recorded operation),
are appended to the tape.  :func:`backward` walks the tape in reverse record
order, which is a valid reverse topological order because a node can only
be recorded after all of its inputs exist.

Also provides the Adam optimizer and a central-difference gradient checker.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import GradError, NonFiniteGradient, ShapeError

LOG_FLOOR = 1e-12

_TAPES: list["Tape"] = []
_FLOAT = [np.float64]


@contextlib.contextmanager
def extended_precision():
    """Build new tensors as ``np.longdouble`` inside the block.

    Only the gradient checker uses this, to push the finite-difference
    noise floor well below float64 round-off.
    """
    _FLOAT.append(np.longdouble)
    try:
        yield
    finally:
        _FLOAT.pop()


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; tapes nest, the innermost one records.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("value", "trainable", "name", "_parents", "_backward", "_tracked")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to the Tensor's reflected op

    def __init__(self, value, trainable=False, name=None):
        self.value = np.array(value, dtype=_FLOAT[-1])
        self.trainable = trainable
        self.name = name
        self._parents = ()
        self._backward = None
        self._tracked = trainable

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.value.shape})"

    def item(self) -> float:
        return float(self.value)

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value, parents, grad_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.trainable = False
    out.name = None
    out._parents = ()
    out._backward = None
    out._tracked = False
    if _TAPES and any(p._tracked for p in parents):
        out._parents = parents
        out._backward = grad_fn
        out._tracked = True
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# derivative helpers, module level so tests can corrupt them deliberately
def _dtanh(y):
    return 1.0 - y * y


def _dsigmoid(y):
    return y * (1.0 - y)


# ---------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "add")
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "sub")
    sa, sb = a.value.shape, b.value.shape
    return _record(a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return _record(av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    """``a / b`` with the denominator floored at ``LOG_FLOOR`` (positive denominators only)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.value, b.value, "div")
    av = a.value
    live = ~(b.value <= LOG_FLOOR)  # NaN stays live so it propagates
    bv = np.where(live, b.value, LOG_FLOOR)
    out = av / bv

    def grad(g):
        return (_unbroadcast(g / bv, av.shape),
                _unbroadcast(np.where(live, -g * out / bv, 0.0), bv.shape))

    return _record(out, (a, b), grad)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    if av.ndim == 1:
        return _record(av @ bv, (a, b), lambda g: (bv @ g, np.outer(av, g)))
    return _record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _record(y, (a,), lambda g: (g * _dtanh(y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = expit(a.value)
    return _record(y, (a,), lambda g: (g * _dsigmoid(y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return _record(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    """Natural log of ``max(a, 1e-12)``; zero gradient where the floor is active."""
    a = as_tensor(a)
    live = ~(a.value <= LOG_FLOOR)  # NaN stays live so it propagates
    xv = np.where(live, a.value, LOG_FLOOR)
    return _record(np.log(xv), (a,), lambda g: (np.where(live, g / xv, 0.0),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    xv = a.value
    return _record(np.logaddexp(0.0, xv), (a,), lambda g: (g * expit(xv),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    xv = a.value
    inside = (xv >= lo) & (xv <= hi)
    return _record(np.clip(xv, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.value.shape[axis] for t in tensors])[:-1]
    return _record(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape

    def grad(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _record(a.value[index], (a,), grad)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.value.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _record(out, (a,), lambda g: (g.reshape(old),))


def tile_rows(a, reps: int) -> Tensor:
    """Stack ``reps`` copies of a 2-D tensor along the first axis."""
    a = as_tensor(a)
    shape = a.value.shape
    return _record(np.tile(a.value, (reps, 1)), (a,),
                   lambda g: (g.reshape(reps, *shape).sum(axis=0),))


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.value.shape
    if axis is None:
        return _record(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, g),))
    return _record(a.value.sum(axis=axis), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def log_sum_exp(a, axis: int = -1) -> Tensor:
    """``log(sum(exp(a)))`` along ``axis`` with the max-shift trick."""
    a = as_tensor(a)
    xv = a.value
    m = np.max(xv, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(xv - m)
    total = s.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    soft = s / total
    return _record(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


# ----------------------------------------------------------------- gradients

def backward(tape: Tape, output: Tensor, params=None):
    """Reverse-mode gradients of a scalar ``output``.

    Returns a list aligned with ``params`` when given (zeros for parameters
    the output does not depend on), otherwise a dict ``{leaf: gradient}``
    over every tracked leaf reached.
    """
    if output.value.size != 1:
        raise GradError(f"backward needs a scalar output, got shape {output.value.shape}")
    adj = {id(output): np.ones_like(output.value)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent._tracked:
                continue
            key = id(parent)
            if parent._backward is None:
                leaves[key] = parent
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    if output._backward is None and output._tracked:
        leaves[id(output)] = output
    if params is None:
        return {leaves[k]: np.reshape(adj[k], leaves[k].value.shape) for k in leaves}
    return [np.reshape(adj[id(p)], p.value.shape) if id(p) in adj else np.zeros_like(p.value)
            for p in params]


def numeric_gradients(f, params, h: float = 1e-5, extended: bool = False):
    """Central-difference gradients of ``f`` w.r.t. every entry of ``params``.

    With ``extended=True`` the perturbed evaluations run in ``np.longdouble``.
    """
    out = []
    originals = [p.value for p in params]
    ctx = extended_precision() if extended else contextlib.nullcontext()
    try:
        with ctx:
            if extended:
                for p in params:
                    p.value = p.value.astype(np.longdouble)
            hh = np.longdouble(h) if extended else h
            for p in params:
                num = np.zeros(p.value.shape)
                for i in range(p.value.size):
                    orig = p.value.flat[i]
                    p.value.flat[i] = orig + hh
                    fp = f().value[()]
                    p.value.flat[i] = orig - hh
                    fm = f().value[()]
                    p.value.flat[i] = orig
                    num.flat[i] = float((fp - fm) / (2 * hh))
                out.append(num)
    finally:
        for p, v in zip(params, originals):
            p.value = v
    return out


def relative_error(analytic, numeric) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(f, params, h: float = 1e-5, extended: bool = False) -> float:
    """Worst relative error between :func:`backward` and central differences.

    ``f`` takes no arguments and builds a scalar Tensor from ``params``.
    The relative error denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    In float64 the difference quotient carries round-off of roughly
    ``1e-16 * |f| / h``; pass ``extended=True`` when ``f`` is large and some
    gradient entries are small.
    """
    with Tape() as tape:
        out = f()
    analytic = backward(tape, out, params)
    return relative_error(analytic, numeric_gradients(f, params, h, extended))


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: list
    v: list
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    skipped: int = 0

    @classmethod
    def for_params(cls, params, lr=3e-4, **kw):
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params], lr=lr, **kw)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam descent step, updating parameter values in place.

    A non-finite gradient leaves everything untouched except ``state.skipped``
    and raises :class:`NonFiniteGradient`.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.value.shape != np.shape(g) or m.shape != p.value.shape:
            raise ShapeError(f"adam_step: shape mismatch for {p!r}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        raise NonFiniteGradient(f"non-finite gradient at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state
