"""Pade-reduced ODEs for the surface and current-collector concentrations.

Sign convention of these ODEs is charge-positive: the caller passes
``j = -j_discharge`` and ``I = -I_discharge`` (see ``ode_current``).
Electrolyte ODEs act on the deviation c_e - c_e0.
"""
from __future__ import annotations

from dataclasses import dataclass

from .constants import FARADAY
from .parameters import CellParameters


class DegenerateGeometry(ValueError):
    pass


@dataclass(frozen=True)
class ElectrolyteOdeCoefficients:
    K: float
    alpha: float
    beta: float
    gamma: float


def ode_current(I_discharge):
    """Discharge-positive current to the ODE convention."""
    return -I_discharge


def solid_forcing(j, R_s, a_s, F=FARADAY):
    return 3.0 * j / (F * R_s * a_s)


def solid_residual(c_ss_dot, j, R_s, a_s, F=FARADAY):
    """dc_ss/dt - 3 j / (F R_s a_s)."""
    return c_ss_dot - solid_forcing(j, R_s, a_s, F)


def electrolyte_coefficients(cell: CellParameters, form="printed"):
    """{'neg': coeffs, 'pos': coeffs}.

    ``printed`` evaluates the published expressions literally.  For the
    negative electrode they give beta < 0 < gamma, i.e. an unstable ODE.
    ``mirrored`` treats the negative electrode as the positive problem seen
    from the other current collector (K -> |K|, '+' signs inside beta and
    gamma), which relaxes to the solver's steady state; alpha is unchanged.
    """
    if form not in ("printed", "mirrored"):
        raise ValueError(f"unknown coefficient form {form!r}")
    F, A = FARADAY, cell.A
    Ln, Ls, Lp = cell.neg.L, cell.L_sep, cell.pos.L
    out = {}
    for side, s, L in (("neg", -1.0, Ln), ("pos", 1.0, Lp)):
        K = Ln + s * 2.0 * Ls - Lp
        eps_e = cell.eps_e_of(side)
        D = cell.D_e_eff(side)
        alpha = s * 3.0 * (1.0 - cell.t_c0) * (K + s * 2.0 * L) ** 2 / (F * A)
        if form == "mirrored" and side == "neg":
            Km = -K
            beta = L * eps_e * (3.0 * Km ** 2 + 10.0 * Km * L + 10.0 * L ** 2)
            gamma = (12.0 * Km + 24.0 * L) * D
        else:
            beta = L * eps_e * (3.0 * K ** 2 + 10.0 * K * L + s * 10.0 * L ** 2)
            gamma = (12.0 * K + 24.0 * L) * D
        out[side] = ElectrolyteOdeCoefficients(K, alpha, beta, gamma)
    return out


def electrolyte_forcing(c_dev, I, coeffs: ElectrolyteOdeCoefficients):
    if coeffs.beta == 0:
        raise DegenerateGeometry("beta = 0: electrolyte ODE undefined")
    return (coeffs.alpha * I - coeffs.gamma * c_dev) / coeffs.beta


def electrolyte_residual(c_e_dot, c_dev, I, coeffs: ElectrolyteOdeCoefficients):
    """dc/dt - (alpha I - gamma c) / beta, with c the deviation from c_e0."""
    return c_e_dot - electrolyte_forcing(c_dev, I, coeffs)
