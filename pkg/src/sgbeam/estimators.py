"""Closed-form feasibility estimates.

Each function returns an :class:`EstimateReport` with the value in SI units,
the inputs it was given and the magnetic-moment convention it uses. Two
conventions coexist on purpose: the quadrupole estimate and the uncertainty
bound take the moment as mu_B, the wire-pair splitting uses g mu_B dS with
dS = 1 between the two spin states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .constants import CONSTANTS, PhysicalConstants


@dataclass(frozen=True)
class EstimateReport:
    value: float
    unit: str
    formula: str
    inputs: dict
    reference: str
    convention: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.formula}: non-finite estimate {self.value!r}")

    def to_dict(self) -> dict:
        return {
            "formula": self.formula,
            "value": self.value,
            "unit": self.unit,
            "inputs": dict(self.inputs),
            "reference": self.reference,
            "convention": self.convention,
            "extra": dict(self.extra),
        }

    def __str__(self) -> str:
        lines = [f"{self.formula}: {self.value:.6g} {self.unit}", f"  {self.reference}"]
        if self.convention:
            lines.append(f"  convention: {self.convention}")
        for k, v in self.inputs.items():
            lines.append(f"  input {k} = {v:.6g}")
        for k, v in self.extra.items():
            lines.append(f"  {k} = {v:.6g}" if isinstance(v, float) else f"  {k} = {v}")
        return "\n".join(lines)


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive, got {v!r}")


def _non_negative(**kw):
    for k, v in kw.items():
        if not v >= 0:
            raise ValueError(f"{k} must be non-negative, got {v!r}")


def lorentz_uncertainty_bound(momentum: float, momentum_spread: float, gradient: float, mass: float,
                              const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Lower bound on the spread of the Lorentz force across a beam of transverse width
    set by the uncertainty principle: (e hbar / 2m) (p / dp_x) B'.

    Compared with the SG force mu_B B' the ratio is (m_e/m)(p/dp_x); the spin
    splitting is resolvable only if it is strictly below one.
    """
    _positive(momentum=momentum, momentum_spread=momentum_spread, mass=mass)
    _non_negative(gradient=gradient)
    e, hbar = const.elementary_charge, const.reduced_planck
    ratio = const.electron_mass / mass * momentum / momentum_spread
    bound = e * hbar / (2 * mass) * momentum / momentum_spread * gradient
    return EstimateReport(
        bound, "N", "lorentz-uncertainty-bound",
        {"momentum": momentum, "momentum_spread": momentum_spread, "gradient": gradient, "mass": mass},
        "uncertainty-limited Lorentz force spread versus SG force",
        "SG force taken as mu_B B'",
        {"sg_force": const.bohr_magneton * gradient, "ratio": ratio, "resolvable": bool(ratio < 1)},
    )


def quadrupole_splitting(gradient: float, length: float, mass: float, speed: float,
                         const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Angular splitting mu_B B' L / (m v^2) after a flight of length L through a quadrupole."""
    _positive(gradient=gradient, length=length, mass=mass, speed=speed)
    angle = const.bohr_magneton * gradient * length / (mass * speed**2)
    return EstimateReport(
        angle, "rad", "quadrupole-splitting",
        {"gradient": gradient, "length": length, "mass": mass, "speed": speed},
        "quadrupole SG splitting over a fixed interaction length", "moment taken as mu_B")


def two_wire_gradient(current: float, d: float, const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Gradient mu0 I / (pi d^2) midway between two thin wires at distance d from the axis."""
    _non_negative(current=current)
    _positive(d=d)
    return EstimateReport(
        const.vacuum_permeability * current / (math.pi * d**2), "T/m", "two-wire-gradient",
        {"current": current, "d": d}, "on-axis gradient of a thin-wire pair")


def two_wire_splitting(current: float, d: float, length: float, mass: float, speed: float,
                       delta_s: float = 1.0, const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Transverse velocity splitting g mu_B dS L/(m v) * mu0 I/(pi d^2); value is the angle dv/v."""
    _positive(current=current, d=d, length=length, mass=mass, speed=speed)
    _non_negative(delta_s=delta_s)
    grad = two_wire_gradient(current, d, const).value
    dv = const.electron_g_factor * const.bohr_magneton * delta_s * length / (mass * speed) * grad
    return EstimateReport(
        dv / speed, "rad", "two-wire-splitting",
        {"current": current, "d": d, "length": length, "mass": mass, "speed": speed, "delta_s": delta_s},
        "SG velocity splitting between the wire pair", "moment g mu_B dS with dS = 1",
        {"delta_v": dv, "gradient": grad})


def lorentz_broadening(length: float, mass: float, gradient: float, waist: float,
                       speed: float | None = None, const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Transverse velocity spread (L/m) e B' dy from the Lorentz force varying across a waist dy.

    The force e v B' dy acts for L/v, so v cancels; ``speed`` only converts
    to an angle. Value is the angle when ``speed`` is given, else the velocity.
    """
    _positive(length=length, mass=mass, gradient=gradient)
    _non_negative(waist=waist)
    dv = length / mass * const.elementary_charge * gradient * waist
    inputs = {"length": length, "mass": mass, "gradient": gradient, "waist": waist}
    if speed is None:
        return EstimateReport(dv, "m/s", "lorentz-broadening", inputs,
                              "Lorentz-force velocity spread across the beam waist")
    _positive(speed=speed)
    inputs["speed"] = speed
    return EstimateReport(dv / speed, "rad", "lorentz-broadening", inputs,
                          "Lorentz-force velocity spread across the beam waist", extra={"delta_v": dv})


def beam_waist_from_emittance(emittance: float, energy: float, divergence: float) -> EstimateReport:
    """Waist eta / (sqrt(E) dtheta) for a 1D emittance eta in m rad sqrt(J) and E in J."""
    _positive(emittance=emittance, energy=energy, divergence=divergence)
    return EstimateReport(
        emittance / (math.sqrt(energy) * divergence), "m", "beam-waist",
        {"emittance": emittance, "energy": energy, "divergence": divergence},
        "emittance-limited waist at a given divergence")


def hexapole_axis_field(a3: float, y0: float, z: float) -> float:
    """B_x on the symmetry axis of the hexapole term, -(a3/3) sqrt(21/2pi) z^2 / y0^2."""
    return -a3 / 3 * math.sqrt(21 / (2 * math.pi)) * z**2 / y0**2


def hexapole_precession(a3: float, y0: float, length: float, speed: float,
                        const: PhysicalConstants = CONSTANTS) -> EstimateReport:
    """Total Larmor angle accumulated on axis over 0 <= z <= L from the hexapole field.

    The integral of gamma |B_x(z)| dz / v in closed form: gamma (|a3|/3) sqrt(21/2pi) L^3 / (3 y0^2 v).
    """
    _positive(y0=y0, speed=speed)
    _non_negative(length=length)
    angle = (const.gyromagnetic_ratio * abs(a3) / 3 * math.sqrt(21 / (2 * math.pi))
             * length**3 / (3 * y0**2 * speed))
    return EstimateReport(
        angle, "rad", "hexapole-precession",
        {"a3": a3, "y0": y0, "length": length, "speed": speed},
        "on-axis spin precession from the hexapole field", extra={"rotations": angle / (2 * math.pi)})
