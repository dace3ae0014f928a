"""Dense / Conv1d / MaxPool networks on top of the tape engine."""
from __future__ import annotations

import re

import numpy as np

from . import tensor as T
from .tensor import Tensor, Variable

ACTIVATIONS = ("relu", "sigmoid", "identity")


class ShapeError(ValueError):
    pass


def _activate(z, activation):
    if activation == "relu":
        return T.relu(z)
    if activation == "sigmoid":
        return T.sigmoid(z)
    return z


def _init_limit(fan_in, fan_out, activation):
    if activation == "relu":
        return np.sqrt(6.0 / fan_in)  # He-uniform
    return np.sqrt(6.0 / (fan_in + fan_out))  # Xavier-uniform


class Dense:
    kind = "Dense"

    def __init__(self, n_in, n_out, activation="relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        rng = rng if rng is not None else np.random.default_rng(0)
        lim = _init_limit(n_in, n_out, activation)
        self.W = Variable(rng.uniform(-lim, lim, size=(n_in, n_out)))
        self.b = Variable(np.zeros(n_out))

    @property
    def params(self):
        return [self.W, self.b]

    def out_shape(self, shape):
        if shape != (self.n_in,):
            raise ShapeError(f"Dense expects ({self.n_in},), got {shape}")
        return (self.n_out,)

    def __call__(self, x):
        return _activate(T.matmul(x, self.W) + self.b, self.activation)

    def with_tangent(self, x, dx):
        z = T.matmul(x, self.W) + self.b
        dz = T.matmul(dx, self.W)
        if self.activation == "relu":
            mask = T.value_of(z) > 0
            return T.relu(z), dz * mask
        if self.activation == "sigmoid":
            s = T.sigmoid(z)
            return s, dz * s * (1.0 - s)
        return z, dz

    def descriptor(self):
        return f"Dense({self.n_out},{self.activation})"


class Conv1d:
    """'valid' 1-D convolution over channels-last input (N, L, C), stride 1."""

    kind = "Conv1d"

    def __init__(self, in_ch, filters, kernel=3, activation="relu", rng=None):
        self.in_ch, self.filters, self.kernel, self.activation = in_ch, filters, kernel, activation
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = kernel * in_ch
        lim = _init_limit(fan_in, filters, activation)
        self.W = Variable(rng.uniform(-lim, lim, size=(fan_in, filters)))
        self.b = Variable(np.zeros(filters))

    @property
    def params(self):
        return [self.W, self.b]

    def out_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.in_ch or shape[0] < self.kernel:
            raise ShapeError(f"Conv1d expects (L>={self.kernel}, {self.in_ch}), got {shape}")
        return (shape[0] - self.kernel + 1, self.filters)

    def __call__(self, x):
        L = x.shape[1]
        n_out = L - self.kernel + 1
        cols = T.concatenate([x[:, i:i + n_out, :] for i in range(self.kernel)], axis=2)
        return _activate(T.matmul(cols, self.W) + self.b, self.activation)

    def descriptor(self):
        return f"Conv1d({self.filters},{self.kernel},{self.activation})"


class MaxPool1d:
    kind = "MaxPool1d"
    params = []

    def __init__(self, size=2, stride=2):
        if size != stride:
            raise ValueError("only non-overlapping pooling (size == stride) is supported")
        self.size, self.stride = size, stride

    def out_shape(self, shape):
        if len(shape) != 2:
            raise ShapeError(f"MaxPool1d expects (L, C), got {shape}")
        return (shape[0] // self.size, shape[1])

    def __call__(self, x):
        n, L, c = x.shape
        m = L // self.size
        if m * self.size != L:
            x = x[:, : m * self.size, :]
        return T.tmax(T.reshape(x, (n, m, self.size, c)), axis=2)

    def descriptor(self):
        return f"MaxPool1d({self.size},{self.stride})"


class Flatten:
    kind = "Flatten"
    params = []

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def __call__(self, x):
        return T.reshape(x, (x.shape[0], -1))

    def descriptor(self):
        return "Flatten"


class Network:
    """Feed-forward stack. ``input_shape`` excludes the batch dimension."""

    def __init__(self, input_shape, layers):
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    def freeze(self):
        for p in self.params:
            p.trainable = False
        return self

    @property
    def frozen(self):
        return not any(p.trainable for p in self.params)

    def _check(self, x):
        shape = tuple(T.value_of(x).shape[1:])
        if shape != self.input_shape:
            raise ShapeError(f"network expects input (N, {self.input_shape}), got (N, {shape})")

    def __call__(self, x):
        self._check(x)
        for layer in self.layers:
            x = layer(x)
        return x

    def forward_with_tangent(self, x, dx):
        """Primal and directional derivative along ``dx`` (dense stacks only)."""
        self._check(x)
        for layer in self.layers:
            if not isinstance(layer, Dense):
                raise ShapeError("tangent propagation only supports Dense layers")
            x, dx = layer.with_tangent(x, dx)
        return x, dx

    def descriptor(self):
        inp = "x".join(str(s) for s in self.input_shape)
        return ">".join([f"Input({inp})"] + [layer.descriptor() for layer in self.layers])

    @classmethod
    def from_descriptor(cls, desc, seed=0):
        rng = np.random.default_rng(seed)
        parts = desc.split(">")
        m = re.fullmatch(r"Input\(([\dx]+)\)", parts[0])
        if not m:
            raise ShapeError(f"bad architecture descriptor: {desc!r}")
        input_shape = tuple(int(s) for s in m.group(1).split("x"))
        shape, layers = input_shape, []
        for part in parts[1:]:
            name, _, args = part.partition("(")
            args = [a for a in args.rstrip(")").split(",") if a]
            if name == "Dense":
                layer = Dense(shape[0], int(args[0]), args[1], rng=rng)
            elif name == "Conv1d":
                layer = Conv1d(shape[1], int(args[0]), int(args[1]), args[2], rng=rng)
            elif name == "MaxPool1d":
                layer = MaxPool1d(int(args[0]), int(args[1]))
            elif name == "Flatten":
                layer = Flatten()
            else:
                raise ShapeError(f"unknown layer {part!r}")
            shape = layer.out_shape(shape)
            layers.append(layer)
        return cls(input_shape, layers)

    def get_weights(self):
        return [p.data.copy() for p in self.params]

    def set_weights(self, weights):
        for p, w in zip(self.params, weights, strict=True):
            if p.data.shape != np.shape(w):
                raise ShapeError(f"weight shape {np.shape(w)} != {p.data.shape}")
            p.data = np.array(w, dtype=np.float64)

    def flops(self):
        """Approximate multiply-add count (x2) for one sample."""
        shape, total = self.input_shape, 0
        for layer in self.layers:
            out = layer.out_shape(shape)
            if isinstance(layer, Dense):
                total += 2 * layer.n_in * layer.n_out
            elif isinstance(layer, Conv1d):
                total += 2 * out[0] * layer.kernel * layer.in_ch * layer.filters
            shape = out
        return total


def time_derivative(net, x, time_index):
    """d(output)/d(input[:, time_index]) by forward-mode tangent propagation."""
    xv = T.value_of(x)
    if not 0 <= time_index < xv.shape[-1]:
        raise ShapeError(f"time index {time_index} outside input width {xv.shape[-1]}")
    dx = np.zeros_like(xv)
    dx[..., time_index] = 1.0
    return net.forward_with_tangent(x, dx)


def mlp(sizes, hidden="relu", output="sigmoid", seed=0):
    rng = np.random.default_rng(seed)
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, output if i == len(sizes) - 2 else hidden, rng=rng))
    return Network((sizes[0],), layers)
