"""Physical constants and kinematic conversions.

Everything is SI. Values are CODATA 2018 (exact SI definitions for e and h,
recommended values for the rest). The electron g-factor is fixed at 2.00232
by default and can be overridden per run through the config file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

AMU = 1.66053906660e-27  # kg, CODATA 2018
ELECTRON_VOLT = 1.602176634e-19  # J per eV (exact)
GAUSS = 1e-4  # T


@dataclass(frozen=True)
class PhysicalConstants:
    elementary_charge: float = 1.602176634e-19  # C
    reduced_planck: float = 1.054571817e-34  # J s
    bohr_magneton: float = 9.2740100783e-24  # J/T
    vacuum_permeability: float = 1.25663706212e-6  # T m / A
    vacuum_permittivity: float = 8.8541878128e-12  # F/m
    electron_mass: float = 9.1093837015e-31  # kg
    electron_g_factor: float = 2.00232
    ion_mass: float = 39.96 * AMU  # 40Ca+

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")

    @property
    def gyromagnetic_ratio(self) -> float:
        """Spin precession rate per tesla, g_e mu_B / hbar (rad s^-1 T^-1)."""
        return self.electron_g_factor * self.bohr_magneton / self.reduced_planck

    @property
    def charge_to_mass(self) -> float:
        return self.elementary_charge / self.ion_mass

    def with_g_factor(self, g: float) -> "PhysicalConstants":
        return PhysicalConstants(**{**vars(self), "electron_g_factor": g})


CONSTANTS = PhysicalConstants()


def kinetic_energy_to_speed(energy_ev: float, mass: float) -> float:
    """Non-relativistic speed for kinetic energy ``energy_ev`` (eV) and ``mass`` (kg)."""
    if not energy_ev > 0:
        raise ValueError(f"kinetic energy must be positive, got {energy_ev!r} eV")
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass!r} kg")
    return math.sqrt(2.0 * energy_ev * ELECTRON_VOLT / mass)


def speed_to_kinetic_energy(speed: float, mass: float) -> float:
    """Inverse of :func:`kinetic_energy_to_speed`; returns eV."""
    if not speed > 0:
        raise ValueError(f"speed must be positive, got {speed!r} m/s")
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass!r} kg")
    return 0.5 * mass * speed * speed / ELECTRON_VOLT


def larmor_frequency(b: float, const: PhysicalConstants = CONSTANTS) -> float:
    """Angular spin-precession frequency g_e mu_B |B| / hbar for field magnitude ``b`` (T)."""
    if b < 0:
        raise ValueError(f"field magnitude must be non-negative, got {b!r} T")
    return const.gyromagnetic_ratio * b


def cyclotron_frequency(b: float, mass: float, const: PhysicalConstants = CONSTANTS) -> float:
    """Angular cyclotron frequency e |B| / m."""
    if b < 0:
        raise ValueError(f"field magnitude must be non-negative, got {b!r} T")
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass!r} kg")
    return const.elementary_charge * b / mass
