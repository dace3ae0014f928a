"""Reverse-mode automatic differentiation over numpy arrays.

Operations are recorded on the active :class:`Tape` whenever one of their
inputs is tracked (a trainable :class:`Variable`, a watched tensor, or the
output of an earlier recorded op).  ``Tape.gradient`` then walks the record
backwards exactly once.
"""
from __future__ import annotations

import numpy as np

_TAPES: list["Tape"] = []


class AutodiffError(RuntimeError):
    """Misuse of the tape (e.g. asking for gradients of an unrecorded value)."""


class Tensor:
    __array_ufunc__ = None  # make ndarray binops defer to Tensor

    def __init__(self, data, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)

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
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"

    def __len__(self):
        return len(self.data)

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Variable(Tensor):
    """A parameter. Frozen variables still pass gradients to their inputs."""

    def __init__(self, data, trainable=True, name=None):
        super().__init__(np.array(data, dtype=np.float64))
        self.trainable = trainable
        self.name = name


class Tape:
    """Records differentiable operations for a single backward pass."""

    def __init__(self):
        self._nodes = []
        self._tracked = set()
        self._keep = []
        self._used = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def watch(self, t):
        if not isinstance(t, Tensor):
            raise AutodiffError("only Tensor values can be watched")
        self._tracked.add(id(t))
        self._keep.append(t)
        return t

    def is_tracked(self, t):
        if not isinstance(t, Tensor):
            return False
        return id(t) in self._tracked or (isinstance(t, Variable) and t.trainable)

    def _record(self, out, inputs, vjp):
        self._nodes.append((out, inputs, vjp))
        self._tracked.add(id(out))

    def gradient(self, target, sources):
        """Gradients of scalar ``target`` with respect to each of ``sources``.

        Untracked sources (frozen variables, unrelated tensors) get zeros.
        """
        if self._used:
            raise AutodiffError("tape already consumed by a backward pass")
        if not isinstance(target, Tensor) or id(target) not in self._tracked:
            raise AutodiffError("target was not recorded on this tape")
        if target.size != 1:
            raise AutodiffError("gradient target must be a scalar")
        self._used = True
        grads = {id(target): np.ones_like(target.data)}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, vjp(g)):
                if gx is None or not self.is_tracked(x):
                    continue
                if callable(gx):
                    gx = gx()
                gx = _unbroadcast(gx, x.shape)
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        single = isinstance(sources, Tensor)
        srcs = [sources] if single else list(sources)
        res = [grads.get(id(s), np.zeros_like(s.data)) for s in srcs]
        return res[0] if single else res


def _active_tape(inputs):
    for tape in reversed(_TAPES):
        if any(tape.is_tracked(x) for x in inputs):
            return tape
    return None


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _val(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _make(out_data, inputs, vjp):
    """Wrap ``out_data`` and record it when any input is tracked."""
    out = Tensor(out_data)
    tensors = tuple(x for x in inputs)
    tape = _active_tape([x for x in tensors if isinstance(x, Tensor)])
    if tape is not None:
        tape._record(out, tensors, vjp)
    return out


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def is_tensor(x):
    return isinstance(x, Tensor)


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b):
    return _make(_val(a) + _val(b), (_lift(a), _lift(b)), lambda g: (g, g))


def sub(a, b):
    return _make(_val(a) - _val(b), (_lift(a), _lift(b)), lambda g: (g, -g))


def mul(a, b):
    av, bv = _val(a), _val(b)
    return _make(av * bv, (_lift(a), _lift(b)), lambda g: (g * bv, g * av))


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(out, (_lift(a), _lift(b)), lambda g: (g / bv, -g * out / bv))


def neg(a):
    return _make(-_val(a), (_lift(a),), lambda g: (-g,))


def power(a, p):
    av = _val(a)
    return _make(av ** p, (_lift(a),), lambda g: (g * p * av ** (p - 1),))


def matmul(a, b):
    av, bv = _val(a), _val(b)

    def vjp(g):
        # deferred so frozen operands cost nothing
        return (lambda: g @ np.swapaxes(bv, -1, -2),
                lambda: np.swapaxes(av, -1, -2) @ g)

    return _make(av @ bv, (_lift(a), _lift(b)), vjp)


# -- elementwise functions ----------------------------------------------------

def exp(a):
    out = np.exp(_val(a))
    return _make(out, (_lift(a),), lambda g: (g * out,))


def log(a):
    av = _val(a)
    return _make(np.log(av), (_lift(a),), lambda g: (g / av,))


def sqrt(a):
    out = np.sqrt(_val(a))
    return _make(out, (_lift(a),), lambda g: (0.5 * g / out,))


def asinh(a):
    av = _val(a)
    return _make(np.arcsinh(av), (_lift(a),), lambda g: (g / np.sqrt(1.0 + av * av),))


def tanh(a):
    out = np.tanh(_val(a))
    return _make(out, (_lift(a),), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    av = _val(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (_lift(a),), lambda g: (g * out * (1.0 - out),))


def relu(a):
    av = _val(a)
    mask = av > 0  # subgradient at 0 is 0
    return _make(av * mask, (_lift(a),), lambda g: (g * mask,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero wherever the clamp is active."""
    av = _val(a)
    inside = (av >= lo) & (av <= hi)
    return _make(np.clip(av, lo, hi), (_lift(a),), lambda g: (g * inside,))


# -- reductions and shape ops -------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    av = _val(a)
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(av.sum(axis=axis, keepdims=keepdims), (_lift(a),), vjp)


def mean(a, axis=None, keepdims=False):
    av = _val(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) / float(n)


def tmax(a, axis):
    """Maximum along one axis; ties route the gradient to the first maximum."""
    av = _val(a)
    idx = np.argmax(av, axis=axis)
    out = np.take_along_axis(av, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        ga = np.zeros_like(av)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (_lift(a),), vjp)


def reshape(a, shape):
    av = _val(a)
    return _make(av.reshape(shape), (_lift(a),), lambda g: (g.reshape(av.shape),))


def transpose(a, axes=None):
    av = _val(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(av, axes), (_lift(a),), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    av = _val(a)

    def vjp(g):
        ga = np.zeros_like(av)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(av[idx], (_lift(a),), vjp)


def concatenate(items, axis=-1):
    vals = [_val(x) for x in items]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(vals, axis=axis), tuple(_lift(x) for x in items), vjp)


def stack(items, axis=-1):
    return concatenate([expand_dims(x, axis) for x in items], axis=axis)


def expand_dims(a, axis):
    av = _val(a)
    return _make(np.expand_dims(av, axis), (_lift(a),), lambda g: (g.reshape(av.shape),))


def custom(a, value, slope):
    """Elementwise op with a caller-supplied derivative (``slope`` = dvalue/da)."""
    return _make(value, (_lift(a),), lambda g: (g * slope,))


def value_of(x):
    """Plain ndarray view of a Tensor or array-like."""
    return _val(x)
