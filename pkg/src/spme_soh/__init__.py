"""SPMe simulation, hybrid surrogate, self-supervised aging-parameter identification and SOH estimation."""
from .parameters import AGING_RANGES, THETA_NAMES, AgingParameters, CellParameters, reference_cell
from .solver import SimRecord, SolverSettings, simulate_discharge

__version__ = "0.1.0"

__all__ = ["AGING_RANGES", "THETA_NAMES", "AgingParameters", "CellParameters", "SimRecord",
           "SolverSettings", "simulate_discharge", "reference_cell"]
