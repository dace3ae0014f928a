"""Full-order SPMe solver for constant-current discharge.

Solid diffusion is a finite-volume sphere per electrode; the electrolyte is a
three-region finite-volume line with harmonic-mean interface conductances.
Both use backward Euler.  Because the current is constant the update is
linear and time invariant, so each step is a precomputed matrix-vector
product and the voltage is evaluated in vectorised chunks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import electrochem as ec
from .constants import FARADAY
from .parameters import AgingParameters, CellParameters


class AbnormalDischarge(RuntimeError):
    """The discharge curve is unusable (too short, never reaches cutoff, ...)."""


class SaturationSignal(AbnormalDischarge):
    pass


class ElectrolyteDepletion(AbnormalDischarge):
    pass


@dataclass(frozen=True)
class SolverSettings:
    n_r: int = 30
    n_x: int = 20
    dt: float = 1.0
    min_duration: float = 60.0
    max_time_factor: float = 3.0  # guard = factor * nominal discharge time


# -- solid phase ---------------------------------------------------------------

class SolidDiffusion:
    """Geometry and backward-Euler operators for one spherical particle.

    Radii are scaled by R_s so shell volumes are O(1); inventories are per
    unit particle of radius 1 (multiply by R_s**3 for moles).
    """

    def __init__(self, R_s, D_s, n_r):
        self.R_s, self.D_s, self.n_r = R_s, D_s, n_r
        edges = np.linspace(0.0, 1.0, n_r + 1)
        self.dr = 1.0 / n_r
        self.volumes = 4.0 / 3.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3)
        self.face_areas = 4.0 * np.pi * edges ** 2
        self.d_hat = D_s / R_s ** 2
        lap = np.zeros((n_r, n_r))
        for i in range(n_r - 1):
            g = self.d_hat * self.face_areas[i + 1] / self.dr
            lap[i, i] -= g
            lap[i, i + 1] += g
            lap[i + 1, i + 1] -= g
            lap[i + 1, i] += g
        self.lap = lap
        self._ops = {}

    def operator(self, dt):
        """(K, g) with c_new = K @ c + g * wall_flux for a step of length dt."""
        op = self._ops.get(dt)
        if op is None:
            m = np.diag(self.volumes) - dt * self.lap
            minv = np.linalg.inv(m)
            b = np.zeros(self.n_r)
            b[-1] = dt * self.face_areas[-1]
            op = (minv * self.volumes[None, :], minv @ b)
            if len(self._ops) < 8:
                self._ops[dt] = op
        return op

    def wall_flux(self, j, a_s):
        """Scaled wall flux (D/R_s^2) dc/d(r/R_s) = (D dc/dr)/R_s imposed by the reaction."""
        return -j / (a_s * FARADAY) / self.R_s

    def surface(self, c, j, a_s):
        # linear extrapolation from the outer shell centre using the imposed gradient
        grad_hat = -j * self.R_s / (a_s * FARADAY * self.D_s)
        return c[..., -1] + 0.5 * self.dr * grad_hat

    def inventory(self, c):
        return c @ self.volumes


@dataclass(frozen=True)
class SolidGrid:
    c: np.ndarray
    model: SolidDiffusion

    @property
    def inventory(self):
        return float(self.model.inventory(self.c))


def step_solid(grid: SolidGrid, j, a_s, dt, c_s_max=None):
    if dt <= 0:
        raise ValueError("dt must be positive")
    K, g = grid.model.operator(dt)
    c = K @ grid.c + g * grid.model.wall_flux(j, a_s)
    if c_s_max is not None:
        cs = grid.model.surface(c, j, a_s)
        if not 0.0 < cs < c_s_max:
            raise SaturationSignal(f"surface concentration {cs:.1f} left (0, {c_s_max})")
    return SolidGrid(c, grid.model)


# -- electrolyte ---------------------------------------------------------------

class ElectrolyteTransport:
    """Three-region line: negative | separator | positive, n_x cells each."""

    def __init__(self, cell: CellParameters, n_x):
        self.n_x = n_x
        regions = ("neg", "sep", "pos")
        lengths = (cell.neg.L, cell.L_sep, cell.pos.L)
        self.dx = np.concatenate([np.full(n_x, L / n_x) for L in lengths])
        self.eps = np.concatenate([np.full(n_x, cell.eps_e_of(r)) for r in regions])
        self.D = np.concatenate([np.full(n_x, cell.D_e_eff(r)) for r in regions])
        n = 3 * n_x
        lap = np.zeros((n, n))
        for i in range(n - 1):
            g = 1.0 / (self.dx[i] / (2 * self.D[i]) + self.dx[i + 1] / (2 * self.D[i + 1]))
            lap[i, i] -= g
            lap[i, i + 1] += g
            lap[i + 1, i + 1] -= g
            lap[i + 1, i] += g
        self.lap = lap
        # source per unit current: (1 - t0) j / F with j = +-I/(A L)
        src = np.zeros(n)
        src[:n_x] = (1.0 - cell.t_c0) / (cell.A * cell.neg.L * FARADAY)
        src[2 * n_x:] = -(1.0 - cell.t_c0) / (cell.A * cell.pos.L * FARADAY)
        self.src = src
        self.capacity = self.eps * self.dx
        self._ops = {}

    def operator(self, dt):
        op = self._ops.get(dt)
        if op is None:
            m = np.diag(self.capacity) - dt * self.lap
            minv = np.linalg.inv(m)
            op = (minv * self.capacity[None, :], minv @ (dt * self.dx * self.src))
            if len(self._ops) < 8:
                self._ops[dt] = op
        return op

    def boundaries(self, c):
        """(c_e at x=0, c_e at x=L) from quadratic zero-gradient extrapolation."""
        return (9.0 * c[..., 0] - c[..., 1]) / 8.0, (9.0 * c[..., -1] - c[..., -2]) / 8.0

    def inventory(self, c, A=1.0):
        return A * (c @ self.capacity)


@dataclass(frozen=True)
class ElectrolyteGrid:
    c: np.ndarray
    model: ElectrolyteTransport

    @property
    def inventory(self):
        return float(self.model.inventory(self.c))


def step_electrolyte(grid: ElectrolyteGrid, I, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    K, h = grid.model.operator(dt)
    c = K @ grid.c + h * I
    if np.any(c <= 0):
        raise ElectrolyteDepletion("electrolyte concentration reached zero")
    return ElectrolyteGrid(c, grid.model)


# -- discharge -------------------------------------------------------------------

@dataclass
class SimRecord:
    theta: AgingParameters
    t: np.ndarray
    I: np.ndarray
    V: np.ndarray
    c_ss_neg: np.ndarray
    c_ss_pos: np.ndarray
    c_e_0: np.ndarray
    c_e_L: np.ndarray
    capacity_ah: float
    soh: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def duration(self):
        return float(self.t[-1])


@lru_cache(maxsize=32)
def _solid_model(R_s, D_s, n_r):
    return SolidDiffusion(R_s, D_s, n_r)


@lru_cache(maxsize=8)
def _electrolyte_model(cell, n_x):
    return ElectrolyteTransport(cell, n_x)


class _Discharge:
    """Per-run bundle: operators, fluxes and the vectorised voltage map."""

    def __init__(self, theta, cell, I, settings, ocps):
        self.theta, self.cell, self.I = theta, cell, I
        self.ocp_neg, self.ocp_pos = ocps
        self.sn = _solid_model(cell.neg.R_s, cell.neg.D_s, settings.n_r)
        self.sp = _solid_model(cell.pos.R_s, cell.pos.D_s, settings.n_r)
        self.el = _electrolyte_model(cell, settings.n_x)
        self.a_n = ec.specific_interfacial_area(theta.eps_s_neg, cell.neg.R_s)
        self.a_p = ec.specific_interfacial_area(theta.eps_s_pos, cell.pos.R_s)
        self.j_n = ec.volumetric_current_density(I, cell.A, cell.neg.L, "neg")
        self.j_p = ec.volumetric_current_density(I, cell.A, cell.pos.L, "pos")
        self.fn = self.sn.wall_flux(self.j_n, self.a_n)
        self.fp = self.sp.wall_flux(self.j_p, self.a_p)

    def step(self, cn, cp, ce, dt):
        Kn, gn = self.sn.operator(dt)
        Kp, gp = self.sp.operator(dt)
        Ke, he = self.el.operator(dt)
        return Kn @ cn + gn * self.fn, Kp @ cp + gp * self.fp, Ke @ ce + he * self.I

    def boundary(self, cn, cp, ce):
        css_n = self.sn.surface(cn, self.j_n, self.a_n)
        css_p = self.sp.surface(cp, self.j_p, self.a_p)
        ce0, ceL = self.el.boundaries(ce)
        return css_n, css_p, ce0, ceL

    def voltage(self, css_n, css_p, ce0, ceL):
        """Vectorised terminal voltage; NaN where the state is unphysical."""
        cell = self.cell
        css_n, css_p = np.atleast_1d(css_n), np.atleast_1d(css_p)
        ce0, ceL = np.atleast_1d(ce0), np.atleast_1d(ceL)
        ok = ((css_n > 0) & (css_n < cell.neg.c_s_max) & (css_p > 0) & (css_p < cell.pos.c_s_max)
              & (ce0 > 0) & (ceL > 0))
        v = np.full(css_n.shape, np.nan)
        if ok.any():
            state = {"css_neg": css_n[ok], "css_pos": css_p[ok], "ce0_neg": ce0[ok], "ceL_pos": ceL[ok]}
            v[ok] = ec.terminal_voltage(state, self.theta, self.I, cell, self.ocp_neg, self.ocp_pos)
        return v


def simulate_discharge(theta: AgingParameters, cell: CellParameters, c_rate=4.0, dt=1.0,
                       settings: SolverSettings | None = None, ocps=None, chunk=64):
    """Constant-current discharge from the fully charged state down to V_min."""
    from .ocp import default_ocps

    settings = settings or SolverSettings(dt=dt)
    dt = settings.dt
    ocps = ocps or default_ocps()
    I = c_rate * cell.Q_nominal
    run = _Discharge(theta, cell, I, settings, ocps)
    cn = np.full(settings.n_r, theta.x100_neg * cell.neg.c_s_max)
    cp = np.full(settings.n_r, theta.x100_pos * cell.pos.c_s_max)
    ce = np.full(3 * settings.n_x, cell.c_e0)
    inv0 = (run.sn.inventory(cn), run.sp.inventory(cp), run.el.inventory(ce))

    t_guard = settings.max_time_factor * 3600.0 / c_rate
    rows = [run.boundary(cn, cp, ce)]
    v0 = run.voltage(*rows[0])[0]
    if not v0 > cell.V_min:
        raise AbnormalDischarge(f"initial loaded voltage {v0:.3f} V already at or below cutoff")
    volts = [v0]
    times = [0.0]
    state = (cn, cp, ce)
    n_steps = 0
    while True:
        states = []
        s = state
        for _ in range(chunk):
            s = run.step(*s, dt)
            states.append(s)
        bnd = run.boundary(*(np.array([st[i] for st in states]) for i in range(3)))
        v = run.voltage(*bnd)
        bad = ~(v > cell.V_min)  # NaN (unphysical state) counts as past the cutoff
        k = int(np.argmax(bad)) if bad.any() else chunk
        for i in range(k):
            rows.append(tuple(b[i] for b in bnd))
            volts.append(v[i])
            times.append((n_steps + i + 1) * dt)
        if bad.any():
            pn, pp, pe = states[k - 1] if k > 0 else state
            t_prev = (n_steps + k) * dt
            break
        state = states[-1]
        n_steps += chunk
        if n_steps * dt > t_guard:
            raise AbnormalDischarge("cutoff voltage not reached within the time guard")

    def v_after(tau):
        if tau <= 0:
            return volts[-1] - cell.V_min
        s = run.step(pn, pp, pe, tau)
        val = run.voltage(*run.boundary(*s))[0]
        return (val - cell.V_min) if np.isfinite(val) else -1.0

    tau = brentq(v_after, 0.0, dt, xtol=1e-9, rtol=1e-12)
    fn_, fp_, fe_ = run.step(pn, pp, pe, tau) if tau > 0 else (pn, pp, pe)
    last = run.boundary(fn_, fp_, fe_)
    v_last = run.voltage(*last)[0]
    if not np.isfinite(v_last):
        raise SaturationSignal("electrode saturated before the cutoff voltage")
    if tau > 1e-12:
        rows.append(last)
        volts.append(v_last)
        times.append(t_prev + tau)
    t = np.array(times)
    if t[-1] < settings.min_duration:
        raise AbnormalDischarge(f"discharge lasted only {t[-1]:.1f} s")
    arr = np.array(rows, dtype=np.float64)
    inv1 = (run.sn.inventory(fn_), run.sp.inventory(fp_), run.el.inventory(fe_))
    return SimRecord(
        theta=theta, t=t, I=np.full(len(t), I), V=np.array(volts),
        c_ss_neg=arr[:, 0], c_ss_pos=arr[:, 1], c_e_0=arr[:, 2], c_e_L=arr[:, 3],
        capacity_ah=I * t[-1] / 3600.0,
        diagnostics={"solid_inventory_start": inv0[:2], "solid_inventory_end": inv1[:2],
                     "electrolyte_inventory_start": inv0[2], "electrolyte_inventory_end": inv1[2]},
    )
