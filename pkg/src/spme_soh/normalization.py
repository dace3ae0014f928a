"""Min-max scaling of every quantity that enters or leaves a network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .parameters import AGING_RANGES, THETA_NAMES, CellParameters, ConfigError

CONCENTRATION_NAMES = ("css_neg", "css_pos", "ce0_neg", "ceL_pos")


@dataclass(frozen=True)
class NormalizationSpec:
    ranges: dict

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if not hi > lo:
                raise ConfigError(f"degenerate normalization range for {name}: [{lo}, {hi}]")

    def bounds(self, name):
        try:
            return self.ranges[name]
        except KeyError:
            raise ConfigError(f"no normalization range for {name!r}") from None

    def normalize(self, name, z):
        lo, hi = self.bounds(name)
        return (z - lo) / (hi - lo)

    def denormalize(self, name, z_norm):
        lo, hi = self.bounds(name)
        return z_norm * (hi - lo) + lo

    def span(self, name):
        lo, hi = self.bounds(name)
        return hi - lo

    def theta_lo_span(self):
        lo = np.array([self.bounds(n)[0] for n in THETA_NAMES])
        hi = np.array([self.bounds(n)[1] for n in THETA_NAMES])
        return lo, hi - lo

    def to_items(self):
        return {f"norm.{k}": f"{lo!r},{hi!r}" for k, (lo, hi) in self.ranges.items()}

    @classmethod
    def from_items(cls, items):
        ranges = {}
        for key, value in items.items():
            if key.startswith("norm."):
                lo, hi = (float(v) for v in value.split(","))
                ranges[key[5:]] = (lo, hi)
        return cls(ranges)


def default_spec(cell: CellParameters, max_c_rate=6.0):
    """Ranges used throughout: aging box, 0..6C current, t/t_end, cutoff window."""
    ranges = {name: tuple(map(float, AGING_RANGES[name])) for name in THETA_NAMES}
    ranges["current"] = (0.0, max_c_rate * cell.Q_nominal)
    ranges["time"] = (0.0, 1.0)
    ranges["voltage"] = (cell.V_min, cell.V_max)
    ranges["css_neg"] = (0.0, cell.neg.c_s_max)
    ranges["css_pos"] = (0.0, cell.pos.c_s_max)
    ranges["ce0_neg"] = (0.0, 2.0 * cell.c_e0)
    ranges["ceL_pos"] = (0.0, 2.0 * cell.c_e0)
    return NormalizationSpec(ranges)
