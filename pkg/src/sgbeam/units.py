"""Parsing of dimensioned quantities at the I/O boundary.

Config files and the ``estimate`` subcommand take values such as ``"100 mA"``,
``"50um"`` or ``"1.6 nm mrad sqrt(eV)"``. A bare number is rejected so that a
forgotten unit can never be read silently as SI.
"""

from __future__ import annotations

import math
import re

from .constants import AMU, ELECTRON_VOLT, GAUSS


class UnitError(ValueError):
    pass


_SQRT_EV = math.sqrt(ELECTRON_VOLT)

# unit string -> (SI factor, dimension)
UNITS: dict[str, tuple[float, str]] = {
    "T": (1.0, "field"),
    "mT": (1e-3, "field"),
    "uT": (1e-6, "field"),
    "G": (GAUSS, "field"),
    "A": (1.0, "current"),
    "mA": (1e-3, "current"),
    "uA": (1e-6, "current"),
    "m": (1.0, "length"),
    "cm": (1e-2, "length"),
    "mm": (1e-3, "length"),
    "um": (1e-6, "length"),
    "nm": (1e-9, "length"),
    "m/s": (1.0, "velocity"),
    "km/s": (1e3, "velocity"),
    "mm/s": (1e-3, "velocity"),
    "eV": (ELECTRON_VOLT, "energy"),
    "meV": (1e-3 * ELECTRON_VOLT, "energy"),
    "ueV": (1e-6 * ELECTRON_VOLT, "energy"),
    "keV": (1e3 * ELECTRON_VOLT, "energy"),
    "J": (1.0, "energy"),
    "rad": (1.0, "angle"),
    "mrad": (1e-3, "angle"),
    "urad": (1e-6, "angle"),
    "deg": (math.pi / 180.0, "angle"),
    "s": (1.0, "time"),
    "ms": (1e-3, "time"),
    "us": (1e-6, "time"),
    "ns": (1e-9, "time"),
    "kg": (1.0, "mass"),
    "amu": (AMU, "mass"),
    "T/m": (1.0, "gradient"),
    "G/cm": (GAUSS / 1e-2, "gradient"),
    "kg m/s": (1.0, "momentum"),
    "m rad sqrt(J)": (1.0, "emittance"),
    "nm mrad sqrt(eV)": (1e-9 * 1e-3 * _SQRT_EV, "emittance"),
    "1": (1.0, "dimensionless"),
}

_ALIASES = {"µ": "u", "μ": "u"}
_QUANTITY = re.compile(r"^\s*([-+]?(?:inf|(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))\s*(.*?)\s*$")


def _normalise_unit(unit: str) -> str:
    for a, b in _ALIASES.items():
        unit = unit.replace(a, b)
    unit = unit.replace("*", " ").replace("·", " ").replace("√eV", "sqrt(eV)")
    return " ".join(unit.split())


def parse_quantity(text: str, dimension: str | None = None) -> float:
    """Parse ``"<number> <unit>"`` into an SI float, checking the dimension if given."""
    if not isinstance(text, str):
        raise UnitError(f"expected a quantity with explicit unit, got bare value {text!r}")
    match = _QUANTITY.match(text)
    if match is None:
        raise UnitError(f"cannot parse quantity {text!r}")
    number, unit = match.groups()
    if not unit:
        raise UnitError(f"quantity {text!r} has no unit; units are mandatory")
    unit = _normalise_unit(unit)
    if unit not in UNITS:
        raise UnitError(f"unknown unit {unit!r} in {text!r}")
    factor, dim = UNITS[unit]
    if dimension is not None and dim != dimension:
        raise UnitError(f"{text!r} has dimension {dim}, expected {dimension}")
    return float(number) * factor


def format_quantity(value: float, unit: str) -> str:
    """Render an SI value in ``unit``; inverse of :func:`parse_quantity`."""
    factor, _ = UNITS[_normalise_unit(unit)]
    return f"{value / factor:.17g} {unit}"
