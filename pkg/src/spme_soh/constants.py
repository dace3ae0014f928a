from dataclasses import dataclass

FARADAY = 96485.0  # C/mol
R_GAS = 8.314  # J/(mol K)
T_DEFAULT = 298.15  # K


@dataclass(frozen=True)
class PhysicalConstants:
    F: float = FARADAY
    R_gas: float = R_GAS
    T: float = T_DEFAULT

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("temperature must be positive")

    @property
    def thermal_voltage(self):
        """2RT/F, the prefactor shared by the kinetic and electrolyte terms."""
        return 2.0 * self.R_gas * self.T / self.F
