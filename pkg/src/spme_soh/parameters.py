"""Cell and aging parameter sets plus the ``key = value`` config format."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .constants import PhysicalConstants, T_DEFAULT


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ElectrodeParameters:
    L: float
    R_s: float
    D_s: float
    eps_s: float
    eps_e: float
    c_s_max: float
    k_0: float
    x_100: float
    x_0: float

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{f.name} must be strictly positive")
        if self.eps_s + self.eps_e > 1.0:
            raise ConfigError("eps_s + eps_e exceeds 1")
        if not (0 < self.x_100 < 1 and 0 < self.x_0 < 1):
            raise ConfigError("stoichiometries must lie in (0, 1)")


@dataclass(frozen=True)
class CellParameters:
    neg: ElectrodeParameters
    pos: ElectrodeParameters
    A: float = 0.087
    L_sep: float = 2e-5
    eps_e_sep: float = 0.54
    c_e0: float = 1200.0
    t_c0: float = 0.363
    D_e: float = 2.5e-10
    kappa: float = 1.0
    brug: float = 1.5
    V_max: float = 3.6
    V_min: float = 2.0
    Q_nominal: float = 1.1
    T: float = T_DEFAULT

    def __post_init__(self):
        if self.V_min >= self.V_max:
            raise ConfigError("V_min must be below V_max")
        for name in ("A", "L_sep", "eps_e_sep", "c_e0", "D_e", "kappa", "Q_nominal", "T"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")

    @property
    def constants(self):
        return PhysicalConstants(T=self.T)

    def electrode(self, side):
        return self.neg if side == "neg" else self.pos

    def eps_e_of(self, region):
        return {"neg": self.neg.eps_e, "sep": self.eps_e_sep, "pos": self.pos.eps_e}[region]

    def D_e_eff(self, region):
        return self.D_e * self.eps_e_of(region) ** self.brug

    def kappa_eff(self, region):
        return self.kappa * self.eps_e_of(region) ** self.brug

    @property
    def L_total(self):
        return self.neg.L + self.L_sep + self.pos.L

    def with_aging(self, theta: "AgingParameters"):
        """Copy with the electrode eps_s / stoichiometry windows taken from theta."""
        neg = replace(self.neg, eps_s=theta.eps_s_neg, x_100=theta.x100_neg, x_0=theta.x0_neg)
        pos = replace(self.pos, eps_s=theta.eps_s_pos, x_100=theta.x100_pos, x_0=theta.x0_pos)
        return replace(self, neg=neg, pos=pos)

    def fresh_theta(self):
        return AgingParameters(self.neg.eps_s, self.pos.eps_s, self.neg.x_100,
                               self.neg.x_0, self.pos.x_100, self.pos.x_0)


def reference_cell():
    """The LFP/graphite 18650 parameter set with the default electrolyte values."""
    neg = ElectrodeParameters(L=3.5e-5, R_s=1e-6, D_s=3.9e-14, eps_s=0.54, eps_e=0.40,
                              c_s_max=30555.0, k_0=3e-11, x_100=0.795, x_0=0.0018)
    pos = ElectrodeParameters(L=6e-5, R_s=2e-6, D_s=8e-14, eps_s=0.373, eps_e=0.44,
                              c_s_max=22806.0, k_0=1.4e-12, x_100=0.016, x_0=0.89)
    return CellParameters(neg=neg, pos=pos)


THETA_NAMES = ("eps_s_neg", "eps_s_pos", "x100_neg", "x0_neg", "x100_pos", "x0_pos")

# feasible sampling box for each aging parameter
AGING_RANGES = {
    "eps_s_neg": (0.45, 0.54),
    "eps_s_pos": (0.34, 0.40),
    "x100_neg": (0.68, 0.80),
    "x0_neg": (0.0015, 0.002),
    "x100_pos": (0.015, 0.016),
    "x0_pos": (0.70, 0.90),
}

# sampled directly; the other two follow from the cutoff voltages
INDEPENDENT_NAMES = ("eps_s_neg", "eps_s_pos", "x100_neg", "x0_pos")


@dataclass(frozen=True)
class AgingParameters:
    eps_s_neg: float
    eps_s_pos: float
    x100_neg: float
    x0_neg: float
    x100_pos: float
    x0_pos: float

    def __post_init__(self):
        for name in THETA_NAMES:
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name}={v} outside (0, 1)")
        if not self.x100_neg > self.x0_neg:
            raise ConfigError("x100_neg must exceed x0_neg")
        if not self.x0_pos > self.x100_pos:
            raise ConfigError("x0_pos must exceed x100_pos")

    def as_array(self):
        return np.array([getattr(self, n) for n in THETA_NAMES])

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def as_dict(self):
        return {n: getattr(self, n) for n in THETA_NAMES}

    def in_box(self, ranges=AGING_RANGES, tol=0.0):
        return all(ranges[n][0] - tol <= getattr(self, n) <= ranges[n][1] + tol for n in THETA_NAMES)


# -- key = value config text --------------------------------------------------

def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def format_kv(items):
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def cell_to_kv(cell: CellParameters):
    items = {}
    for side in ("neg", "pos"):
        for f in fields(ElectrodeParameters):
            items[f"{side}.{f.name}"] = _fmt(getattr(cell.electrode(side), f.name))
    for f in fields(CellParameters):
        if f.name not in ("neg", "pos"):
            items[f.name] = _fmt(getattr(cell, f.name))
    return items


def cell_from_kv(items, base: CellParameters | None = None):
    """Apply recognised keys on top of ``base``; unknown keys are returned untouched."""
    base = base or reference_cell()
    electrode_keys = {f.name for f in fields(ElectrodeParameters)}
    cell_keys = {f.name for f in fields(CellParameters)} - {"neg", "pos"}
    sides = {"neg": {}, "pos": {}}
    top, rest = {}, {}
    for key, value in items.items():
        side, _, name = key.partition(".")
        try:
            if side in sides and name in electrode_keys:
                sides[side][name] = float(value)
            elif key in cell_keys:
                top[key] = float(value)
            else:
                rest[key] = value
        except ValueError as exc:
            raise ConfigError(f"{key}: not a number: {value!r}") from exc
    neg = replace(base.neg, **sides["neg"])
    pos = replace(base.pos, **sides["pos"])
    return replace(base, neg=neg, pos=pos, **top), rest

