"""Physical constants (CODATA 2018 exact/recommended values)."""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    h: float = 6.62607015e-34  # J s
    hbar: float = 1.054571817e-34  # J s
    mu_b: float = 9.2740100783e-24  # J/T
    g_e: float = 2.0028
    mu_0: float = 1.25663706212e-6  # T m/A

    @property
    def gamma_hz_per_t(self) -> float:
        """Gyromagnetic ratio g_e * mu_B / h in Hz/T."""
        return self.g_e * self.mu_b / self.h


CONSTANTS = PhysicalConstants()
GAMMA_HZ_PER_T = CONSTANTS.gamma_hz_per_t
