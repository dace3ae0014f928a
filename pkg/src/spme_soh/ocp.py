"""Table-driven open-circuit potential curves."""
from __future__ import annotations

import csv
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .autodiff import tensor as T


class OcpTableError(ValueError):
    pass


class OcpCurve:
    """Monotone cubic interpolant of U(x); clamped outside the tabulated range."""

    def __init__(self, x, u, name="ocp"):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        if x.ndim != 1 or x.shape != u.shape or len(x) < 2:
            raise OcpTableError(f"{name}: need matching 1-D x/u columns with >= 2 rows")
        if np.any(np.diff(x) <= 0):
            raise OcpTableError(f"{name}: x must be strictly increasing")
        self.name = name
        self.x, self.u = x, u
        self.lo, self.hi = float(x[0]), float(x[-1])
        self._f = PchipInterpolator(x, u, extrapolate=False)
        self._df = self._f.derivative()

    def __call__(self, x):
        xv = np.clip(T.value_of(x), self.lo, self.hi)
        u = self._f(xv)
        if isinstance(x, T.Tensor):
            raw = T.value_of(x)
            slope = np.where((raw >= self.lo) & (raw <= self.hi), self._df(xv), 0.0)
            return T.custom(x, u, slope)
        return u if np.ndim(u) else float(u)

    def derivative(self, x):
        xv = np.asarray(x, dtype=np.float64)
        inside = (xv >= self.lo) & (xv <= self.hi)
        return np.where(inside, self._df(np.clip(xv, self.lo, self.hi)), 0.0)

    @classmethod
    def from_csv(cls, path, name=None):
        path = Path(path)
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["x", "u_volts"]:
                raise OcpTableError(f"{path}: expected header 'x,u_volts', got {header}")
            xs, us = [], []
            for lineno, row in enumerate(reader, 2):
                if not row:
                    continue
                try:
                    xs.append(float(row[0]))
                    us.append(float(row[1]))
                except (ValueError, IndexError) as exc:
                    raise OcpTableError(f"{path}:{lineno}: bad row {row}") from exc
        return cls(xs, us, name=name or path.stem)


def _bundled(filename):
    return resources.files("spme_soh") / "data" / filename


@lru_cache(maxsize=None)
def graphite_ocp():
    with resources.as_file(_bundled("graphite_ocp.csv")) as p:
        return OcpCurve.from_csv(p, "graphite")


@lru_cache(maxsize=None)
def lfp_ocp():
    with resources.as_file(_bundled("lfp_ocp.csv")) as p:
        return OcpCurve.from_csv(p, "lfp")


def default_ocps():
    """(negative, positive) curves shipped with the package."""
    return graphite_ocp(), lfp_ocp()
