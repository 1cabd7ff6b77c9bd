"""Period-averaged model of the ion above the grating.

In the frame that follows the rotating grating field along the trajectory
(rotation rate kappa * v_z0 about x), the spin sees a static effective
field: the bias Larmor frequency shifted by the rotation, ``Om0' = Om0 -
kappa v_z0``, plus the grating term ``Om1 exp(-kappa h)`` along z'. If the
height changes slowly the spin stays locked to this axis and the fast
motion can be averaged over a grating period. What is left is a planar
system for (y, v_y, v_z):

    dv_y/dt = w0 v_z - e^2/(16 pi eps0 m h^2) + w1(h)^2/(2 kappa) + u w1(h) S_z'(h)
    dv_z/dt = -w0 v_y

with h the height above the surface, ``w1(h) = w1 exp(-kappa h)`` and
``S_z'`` the adiabatic spin component along the rotating grating field.
Only the first grating harmonic enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .constants import CONSTANTS, PhysicalConstants, cyclotron_frequency, larmor_frequency
from .dynamics import IntegratorOptions, Status
from .fields import FieldDomainError, GratingParams
from .forces import ImageParams, image_coefficient


class UnreachableTargetError(ValueError):
    """The requested turning point cannot be reached without crashing."""


@dataclass(frozen=True)
class AdiabaticParams:
    """Frequencies (rad/s) of the bias (index 0) and first grating harmonic (index 1).

    ``Omega*`` are Larmor and ``omega*`` cyclotron frequencies. Heights are
    measured from ``surface_height``, the top of the wires.
    """

    Omega0: float
    Omega1: float
    omega0: float
    omega1: float
    kappa: float  # 1/m
    vz0: float  # m/s, reference axial speed for the Doppler shift
    u: float  # m/s, g mu_B kappa / e
    spin_x0: float = 0.5  # initial spin projection on the bias axis
    surface_height: float = 0.0
    dynamic_vz: bool = False  # use the instantaneous v_z in the Doppler shift

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if abs(self.spin_x0) > 0.5:
            raise ValueError("spin_x0 must lie in [-1/2, 1/2]")
        if self.doppler_shifted_bias == 0.0:
            raise ValueError("Omega0 - kappa*vz0 vanishes: no well-defined precession axis far from the grating")

    @classmethod
    def from_fields(cls, b0: float, b1: float, kappa: float, vz0: float, spin_x0: float = 0.5,
                    surface_height: float = 0.0, const: PhysicalConstants = CONSTANTS,
                    dynamic_vz: bool = False) -> "AdiabaticParams":
        """Build from the bias ``b0`` and surface grating amplitude ``b1`` (T, signed)."""
        sgn0 = math.copysign(1.0, b0)
        sgn1 = math.copysign(1.0, b1)
        return cls(
            Omega0=sgn0 * larmor_frequency(abs(b0), const),
            Omega1=sgn1 * larmor_frequency(abs(b1), const),
            omega0=sgn0 * cyclotron_frequency(abs(b0), const.ion_mass, const),
            omega1=sgn1 * cyclotron_frequency(abs(b1), const.ion_mass, const),
            kappa=kappa,
            vz0=vz0,
            u=const.electron_g_factor * const.bohr_magneton * kappa / const.elementary_charge,
            spin_x0=spin_x0,
            surface_height=surface_height,
            dynamic_vz=dynamic_vz,
        )

    @classmethod
    def for_grating(cls, grating: GratingParams, b0: float, vz0: float, spin_x0: float = 0.5,
                    const: PhysicalConstants = CONSTANTS, dynamic_vz: bool = False) -> "AdiabaticParams":
        return cls.from_fields(b0, grating.b1, grating.kappa, vz0, spin_x0,
                               grating.surface_height, const, dynamic_vz)

    @property
    def doppler_shifted_bias(self) -> float:
        return self.Omega0 - self.kappa * self.vz0

    @property
    def spin_sign(self) -> float:
        """S_x0 times the sign of the Doppler-shifted bias: the sign of the SG term."""
        return self.spin_x0 * math.copysign(1.0, self.doppler_shifted_bias)

    def with_spin(self, spin_x0: float) -> "AdiabaticParams":
        return replace(self, spin_x0=spin_x0)

    def with_vz0(self, vz0: float) -> "AdiabaticParams":
        return replace(self, vz0=vz0)


def _height(y: float, p: AdiabaticParams) -> float:
    h = y - p.surface_height
    if not h > 0:
        raise FieldDomainError(f"height {h!r} m is on or below the grating surface")
    return h


def effective_precession(y: float, p: AdiabaticParams) -> tuple[float, np.ndarray]:
    """(Omega_tilde, unit axis) of the precession in the rotating frame."""
    o0 = p.doppler_shifted_bias
    o1 = p.Omega1 * math.exp(-p.kappa * (y - p.surface_height))
    ot = math.hypot(o0, o1)
    return ot, np.array([o0 / ot, 0.0, o1 / ot])


def adiabatic_spin(y: float, p: AdiabaticParams) -> np.ndarray:
    """Rotating-frame spin locked to the effective axis, equal to S_x0 x far away."""
    _, axis = effective_precession(y, p)
    return math.copysign(1.0, p.doppler_shifted_bias) * p.spin_x0 * axis


def transverse_wiggle_amplitude(y: float, p: AdiabaticParams) -> float:
    """Amplitude w1(y)/kappa (m/s) of the v_x oscillation at the Doppler frequency."""
    return abs(p.omega1) * math.exp(-p.kappa * (y - p.surface_height)) / p.kappa


@dataclass(frozen=True)
class AccelTerms:
    """The four contributions to the averaged vertical acceleration (m/s^2)."""

    cyclotron: float
    image: float
    ponderomotive: float
    stern_gerlach: float

    @property
    def total(self) -> float:
        return self.cyclotron + self.image + self.ponderomotive + self.stern_gerlach

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cyclotron, self.image, self.ponderomotive, self.stern_gerlach)


def _scal(p: AdiabaticParams, image: ImageParams, const: PhysicalConstants) -> np.ndarray:
    return np.array([
        p.omega0, p.omega1, p.Omega0, p.Omega1, p.kappa, p.vz0, p.u, p.spin_sign,
        float(image.enabled), p.surface_height, image_coefficient(const) / const.ion_mass,
        float(p.dynamic_vz), image.surface_height,
    ])


def averaged_accel_terms(y: float, v_z: float, p: AdiabaticParams, image: ImageParams = ImageParams(),
                         const: PhysicalConstants = CONSTANTS) -> AccelTerms:
    """Term-by-term averaged vertical acceleration at height ``y``.

    The SG term is evaluated as u * w1(y) * S_z'(y), i.e. the grating
    cyclotron frequency at height y times the adiabatic spin component.
    """
    _height(y, p)
    if image.enabled and not y > image.surface_height:
        raise FieldDomainError(f"y = {y!r} m is on or below the image surface")
    terms = np.empty(4)
    K.adiabatic_terms(y, v_z, _scal(p, image, const), terms)
    return AccelTerms(*map(float, terms))


def averaged_accel_y(y: float, v_z: float, p: AdiabaticParams, image: ImageParams = ImageParams(),
                     const: PhysicalConstants = CONSTANTS) -> float:
    return averaged_accel_terms(y, v_z, p, image, const).total


def crash_bias_minimum(v_z: float, y_min: float, const: PhysicalConstants = CONSTANTS) -> float:
    """Smallest bias B0 (T) with e v_z B0 above the image force at height ``y_min``."""
    if not v_z > 0 or not y_min > 0:
        raise ValueError("v_z and y_min must be positive")
    return const.elementary_charge / (16 * math.pi * const.vacuum_permittivity * y_min**2 * v_z)


def adiabaticity(y: float, v_y: float, p: AdiabaticParams) -> float:
    """|d n'/dt| / Omega_tilde: rotation rate of the effective axis over the precession rate."""
    o0 = p.doppler_shifted_bias
    o1 = p.Omega1 * math.exp(-p.kappa * (y - p.surface_height))
    ot2 = o0 * o0 + o1 * o1
    return p.kappa * abs(v_y) * abs(o0 * o1) / ot2**1.5


ADIABATICITY_LIMIT = 0.1


# --- effective potential -----------------------------------------------------------
#
# Without the v_z coupling the vertical motion conserves 1/2 v^2 + U(y); with it
# P = v_z + w0 y is also conserved, so turning points follow from algebra.


def effective_potential(y: float, p: AdiabaticParams, image: ImageParams = ImageParams(),
                        const: PhysicalConstants = CONSTANTS) -> float:
    """U(y) per unit mass (m^2/s^2) with a_y = w0 v_z - dU/dy, v_z frozen at vz0 in the Doppler term."""
    h = _height(y, p)
    u_val = p.omega1**2 / (4 * p.kappa**2) * math.exp(-2 * p.kappa * h)
    if image.enabled:
        hi = y - image.surface_height
        if not hi > 0:
            raise FieldDomainError(f"y = {y!r} m is on or below the image surface")
        u_val -= image_coefficient(const) / const.ion_mass / hi
    if p.Omega1 != 0.0:
        ot, _ = effective_precession(y, p)
        u_val += p.u * p.omega1 * p.spin_sign / (p.kappa * p.Omega1) * ot
    return u_val


def _turning_gap(y_launch, v_y, v_z, p, image, const):
    # G(yt) = E - 1/2 v_z(yt)^2 - U(yt): zero where v_y vanishes
    energy = 0.5 * (v_y**2 + v_z**2) + effective_potential(y_launch, p, image, const)
    momentum = v_z + p.omega0 * y_launch

    def gap(yt):
        return energy - 0.5 * (momentum - p.omega0 * yt) ** 2 - effective_potential(yt, p, image, const)
    return gap


def turning_point(y: float, v_y: float, v_z: float, p: AdiabaticParams, image: ImageParams = ImageParams(),
                  const: PhysicalConstants = CONSTANTS, y_floor: float | None = None, n_scan: int = 400) -> float:
    """Lowest height reached by the averaged motion from a descending state.

    Raises :class:`UnreachableTargetError` if the ion reaches ``y_floor``
    (default: just above the surface) without turning.
    """
    if v_y >= 0:
        return y
    floor = max(p.surface_height, image.surface_height if image.enabled else -math.inf)
    lo = floor + 1e-9 if y_floor is None else y_floor
    gap = _turning_gap(y, v_y, v_z, p, image, const)
    # scan downwards for the first sign change of the gap, geometric in the height
    heights = floor + np.geomspace(y - floor, lo - floor, n_scan)
    prev = heights[0]
    for yt in heights[1:]:
        g = gap(yt)
        if g <= 0:
            return brentq(gap, yt, prev, xtol=1e-15, rtol=1e-13)
        prev = yt
    raise UnreachableTargetError(f"no turning point above y = {lo!r} m: the ion crashes")


def launch_height_for_turning_point(y_target: float, speed: float, angle: float, p: AdiabaticParams,
                                    image: ImageParams = ImageParams(), const: PhysicalConstants = CONSTANTS,
                                    h_max: float = 2e-3) -> float:
    """Launch height from which a descent at ``angle`` below the z-axis turns at ``y_target``.

    ``p.vz0`` should equal ``speed * cos(angle)``. Raises
    :class:`UnreachableTargetError` if the bias cannot hold the ion at the
    target against the image force, or if no launch height below ``h_max``
    works.
    """
    if not speed > 0 or not angle > 0:
        raise ValueError("speed and angle must be positive")
    v_y = -speed * math.sin(angle)
    v_z = speed * math.cos(angle)

    def gap(h):
        return (0.5 * speed**2 + effective_potential(h, p, image, const)
                - effective_potential(y_target, p, image, const)
                - 0.5 * (v_z + p.omega0 * (h - y_target)) ** 2)

    lo = y_target + 1e-9
    if gap(lo) * gap(h_max) > 0:
        raise UnreachableTargetError(f"no launch height in ({lo:g}, {h_max:g}) m turns at {y_target:g} m")
    h = brentq(gap, lo, h_max, xtol=1e-16, rtol=1e-14)
    v_z_turn = v_z + p.omega0 * (h - y_target)
    _check_reachable(y_target, v_z_turn, p, image, const)
    if turning_point(h, v_y, v_z, p, image, const) < y_target * (1 - 1e-6):
        raise UnreachableTargetError(f"the descent from {h:g} m does not turn at {y_target:g} m")
    return h


def _check_reachable(y_target, v_z_turn, p, image, const):
    if image.enabled:
        b0 = abs(p.omega0) * const.ion_mass / const.elementary_charge
        b_min = crash_bias_minimum(v_z_turn, y_target - image.surface_height, const)
        if not b0 > b_min:
            raise UnreachableTargetError(
                f"crash condition e*v_z*B0 > e^2/(16 pi eps0 y^2) fails at y = {y_target:g} m: "
                f"B0 = {b0:g} T <= {b_min:g} T")
    if not averaged_accel_y(y_target, v_z_turn, p, image, const) > 0:
        raise UnreachableTargetError(f"net averaged force at y = {y_target:g} m points towards the surface")


# --- reduced integrator -------------------------------------------------------------


REDUCED_COLUMNS = ("t", "y", "vy", "vz", "z")
TERM_COLUMNS = ("a_cyclotron", "a_image", "a_ponderomotive", "a_sg")


@dataclass
class ReducedTrajectory:
    t: np.ndarray
    states: np.ndarray  # (n, 4): y vy vz z
    status: Status
    params: AdiabaticParams
    image: ImageParams
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def closest_approach(self) -> float:
        return self.diagnostics["closest_approach"]

    def final_angle(self) -> float:
        y, vy, vz, z = self.states[-1]
        return math.atan2(vy, vz)

    def terms(self, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
        """(n, 4) averaged-acceleration terms at each recorded sample."""
        scal = _scal(self.params, self.image, const)
        out = np.full((len(self.t), 4), np.nan)
        buf = np.empty(4)
        for i, (y, vy, vz, z) in enumerate(self.states):
            if K.adiabatic_terms(y, vz, scal, buf) == K.OK:
                out[i] = buf
        return out

    def table(self, const: PhysicalConstants = CONSTANTS) -> np.ndarray:
        """Columns :data:`REDUCED_COLUMNS` + :data:`TERM_COLUMNS`."""
        return np.column_stack([self.t, self.states, self.terms(const)])


def integrate_adiabatic(initial, p: AdiabaticParams, image: ImageParams = ImageParams(),
                        opts: IntegratorOptions = IntegratorOptions(),
                        const: PhysicalConstants = CONSTANTS, t0: float = 0.0) -> ReducedTrajectory:
    """Integrate the averaged planar system from ``initial = (y, v_y, v_z[, z])``.

    Crash, exit and window semantics follow :func:`sgbeam.dynamics.integrate`;
    the crash height is ``p.surface_height + opts.y_min``.
    """
    y0 = np.zeros(4)
    init = np.asarray(initial, dtype=np.float64)
    if init.shape not in ((3,), (4,)):
        raise ValueError("initial must be (y, v_y, v_z) or (y, v_y, v_z, z)")
    y0[:3] = init[:3]
    if init.shape == (4,):
        y0[3] = init[3]
    if not y0[0] > p.surface_height:
        raise FieldDomainError("initial height must lie above the surface")
    pos_tol, vel_tol, _ = opts.abs_tol
    atol = np.array([pos_tol, vel_tol, vel_tol, pos_tol])
    y_crash = -math.inf if opts.y_min is None else p.surface_height + opts.y_min
    ts, ys, status, n_acc, n_rej, _, y_close, t_close = K.integrate(
        K.adiabatic_args(_scal(p, image, const)), t0, y0, atol, opts.rel_tol, opts.max_step,
        t0 + opts.t_max, opts.max_steps, opts.record_stride, 0, 1, 3,
        y_crash, opts.y_max, opts.z_min, opts.z_max, -1, False)
    monitor = max(adiabaticity(y, vy, p) for y, vy, _, _ in ys if y > p.surface_height)
    return ReducedTrajectory(ts, ys, Status(status), p, image, {
        "n_steps": int(n_acc),
        "n_rejected": int(n_rej),
        "closest_approach": float(y_close),
        "t_closest": float(t_close),
        "adiabaticity": float(monitor),
        "adiabatic_ok": bool(monitor < ADIABATICITY_LIMIT),
    })
