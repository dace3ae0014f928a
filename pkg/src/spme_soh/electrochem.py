"""Algebraic SPMe relations: kinetics, electrolyte drop, terminal voltage, capacity.

Every function accepts floats, ndarrays or autodiff Tensors; with Tensors the
result is recorded on the active tape.  Current is positive on discharge.
"""
from __future__ import annotations

import numpy as np

from .autodiff import math as am
from .constants import FARADAY, R_GAS
from .parameters import AgingParameters, CellParameters


class DomainError(ValueError):
    pass


class SaturationError(ValueError):
    """Surface stoichiometry reached 0 or 1: the electrode is exhausted."""


def _check_positive(name, *values):
    for v in values:
        if np.any(am.value(v) <= 0):
            raise DomainError(f"{name} must be strictly positive")


def specific_interfacial_area(eps_s, R_s):
    _check_positive("eps_s and R_s", eps_s, R_s)
    return 3.0 * eps_s / R_s


def volumetric_current_density(I, A, L, side):
    if side not in ("neg", "pos"):
        raise ValueError(f"side must be 'neg' or 'pos', not {side!r}")
    _check_positive("A and L", A, L)
    sign = 1.0 if side == "neg" else -1.0
    return sign * I / (A * L)


def exchange_current_density(k_0, c_e, c_ss, c_s_max, F=FARADAY):
    cv = am.value(c_ss)
    if np.any(cv <= 0) or np.any(cv >= c_s_max):
        raise SaturationError("surface concentration outside (0, c_s_max)")
    _check_positive("c_e", c_e)
    return F * k_0 * am.sqrt(c_e * (c_s_max - c_ss) * c_ss)


def overpotential(j, a_s, i_0, T, F=FARADAY, R=R_GAS):
    _check_positive("a_s and i_0", a_s, i_0)
    return (2.0 * R * T / F) * am.asinh(j / (2.0 * a_s * i_0))


def ohmic_resistance(cell: CellParameters):
    """Area-specific electrolyte resistance L+/2k+ + Lsep/ksep + L-/2k-, ohm m^2."""
    return (cell.pos.L / (2.0 * cell.kappa_eff("pos")) + cell.L_sep / cell.kappa_eff("sep")
            + cell.neg.L / (2.0 * cell.kappa_eff("neg")))


def electrolyte_potential_drop(I, cell: CellParameters, c_e_L_pos, c_e_0_neg):
    _check_positive("electrolyte concentration", c_e_L_pos, c_e_0_neg)
    c = cell.constants
    return (-ohmic_resistance(cell) * I / cell.A
            + c.thermal_voltage * (1.0 - cell.t_c0) * am.log(c_e_L_pos / c_e_0_neg))


def _eps_pair(theta):
    if isinstance(theta, AgingParameters):
        return theta.eps_s_neg, theta.eps_s_pos
    return theta[..., 0], theta[..., 1]


def terminal_voltage(state, theta, I, cell: CellParameters, ocp_neg, ocp_pos, clamp=False):
    """Terminal voltage from the four boundary concentrations.

    ``state`` maps css_neg, css_pos, ce0_neg, ceL_pos to values; ``theta`` is an
    AgingParameters or a (..., 6) array/Tensor in THETA_NAMES order.  With
    ``clamp`` the surface concentrations are held inside
    [1e-3, 1 - 1e-3] * c_s_max instead of raising.
    """
    eps_neg, eps_pos = _eps_pair(theta)
    css_n, css_p = state["css_neg"], state["css_pos"]
    if clamp:
        dn, dp = 1e-3 * cell.neg.c_s_max, 1e-3 * cell.pos.c_s_max
        css_n = am.clip(css_n, dn, cell.neg.c_s_max - dn)
        css_p = am.clip(css_p, dp, cell.pos.c_s_max - dp)
    T = cell.T
    a_n = specific_interfacial_area(eps_neg, cell.neg.R_s)
    a_p = specific_interfacial_area(eps_pos, cell.pos.R_s)
    j_n = volumetric_current_density(I, cell.A, cell.neg.L, "neg")
    j_p = volumetric_current_density(I, cell.A, cell.pos.L, "pos")
    ce0, ceL = state["ce0_neg"], state["ceL_pos"]
    i0_n = exchange_current_density(cell.neg.k_0, ce0, css_n, cell.neg.c_s_max)
    i0_p = exchange_current_density(cell.pos.k_0, ceL, css_p, cell.pos.c_s_max)
    eta_n = overpotential(j_n, a_n, i0_n, T)
    eta_p = overpotential(j_p, a_p, i0_p, T)
    ocv = ocp_pos(css_p / cell.pos.c_s_max) - ocp_neg(css_n / cell.neg.c_s_max)
    return ocv + eta_p - eta_n + electrolyte_potential_drop(I, cell, ceL, ce0)


def rest_voltage(x_neg, x_pos, ocp_neg, ocp_pos):
    return ocp_pos(x_pos) - ocp_neg(x_neg)


def theoretical_capacity(electrode, A, eps_s=None):
    """A L eps_s c_s_max F in Ah."""
    eps = electrode.eps_s if eps_s is None else eps_s
    return A * electrode.L * eps * electrode.c_s_max * FARADAY / 3600.0


def electrode_capacities(theta: AgingParameters, cell: CellParameters):
    """(negative, positive) accessible capacity |x100 - x0| * Q_theory, Ah."""
    q_n = abs(theta.x100_neg - theta.x0_neg) * theoretical_capacity(cell.neg, cell.A, theta.eps_s_neg)
    q_p = abs(theta.x100_pos - theta.x0_pos) * theoretical_capacity(cell.pos, cell.A, theta.eps_s_pos)
    return q_n, q_p


def cell_capacity(theta: AgingParameters, cell: CellParameters):
    """Capacity of the limiting electrode."""
    return min(electrode_capacities(theta, cell))
