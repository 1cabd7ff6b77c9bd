"""Point-wise forces on the ion: Stern-Gerlach, Lorentz and image charge."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .constants import CONSTANTS, PhysicalConstants
from .fields import FieldDomainError, FieldModel, FieldSample


@dataclass(frozen=True)
class ImageParams:
    """Grounded conducting plane at ``y = surface_height``."""

    surface_height: float = 0.0
    enabled: bool = True


NO_IMAGE = ImageParams(enabled=False)


def image_coefficient(const: PhysicalConstants = CONSTANTS) -> float:
    """e^2 / (16 pi eps0), so that V_im = -coef / h and |F| = coef / h^2."""
    return const.elementary_charge**2 / (16 * math.pi * const.vacuum_permittivity)


def sg_force(S, fs: FieldSample, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Spin-dependent force -g mu_B (S . grad) B (N)."""
    g_mub = const.electron_g_factor * const.bohr_magneton
    return K.sg_force(np.asarray(S, dtype=np.float64), fs.J, g_mub)


def lorentz_force(v, B, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    return K.lorentz_force(np.asarray(v, dtype=np.float64), np.asarray(B, dtype=np.float64),
                           const.elementary_charge)


def _height(y: float, p: ImageParams) -> float:
    h = y - p.surface_height
    if not h > 0:
        raise FieldDomainError(f"ion at height {h!r} m is on or below the conducting surface")
    return h


def image_potential(y: float, p: ImageParams = ImageParams(), const: PhysicalConstants = CONSTANTS) -> float:
    """V_im = -e^2 / (16 pi eps0 h) in joules; zero when disabled."""
    if not p.enabled:
        return 0.0
    return -image_coefficient(const) / _height(y, p)


def image_force(y: float, p: ImageParams = ImageParams(), const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Attraction towards the surface, -grad V_im."""
    if not p.enabled:
        return np.zeros(3)
    h = _height(y, p)
    return np.array([0.0, -image_coefficient(const) / h**2, 0.0])


def total_acceleration(state, model: FieldModel, image: ImageParams = NO_IMAGE,
                       const: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """(F_SG + F_Lorentz + F_image) / m for an IonState."""
    fs = model.sample(state.r)
    force = sg_force(state.S, fs, const) + lorentz_force(state.v, fs.B, const) + image_force(state.r[1], image, const)
    return force / const.ion_mass
