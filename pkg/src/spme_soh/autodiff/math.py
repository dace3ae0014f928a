"""Elementwise functions that stay in numpy unless handed a Tensor.

Physics code is written once against these and works both for plain
float/array evaluation and on a recording tape.
"""
import numpy as np

from . import tensor as T


def _any_tensor(*xs):
    return any(isinstance(x, T.Tensor) for x in xs)


def exp(x):
    return T.exp(x) if _any_tensor(x) else np.exp(x)


def log(x):
    return T.log(x) if _any_tensor(x) else np.log(x)


def sqrt(x):
    return T.sqrt(x) if _any_tensor(x) else np.sqrt(x)


def asinh(x):
    return T.asinh(x) if _any_tensor(x) else np.arcsinh(x)


def clip(x, lo, hi):
    return T.clip(x, lo, hi) if _any_tensor(x) else np.clip(x, lo, hi)


def value(x):
    return T.value_of(x)
