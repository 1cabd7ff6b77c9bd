"""Semiclassical spin + centre-of-mass dynamics.

The state of one ion is its position, velocity and spin expectation value
``S`` (|S| = 1/2). The equations of motion are

    dS/dt = -(g mu_B / hbar) S x B(r)
    m dv/dt = -g mu_B (S . grad) B(r) + e v x B(r) - grad V_im(r)

integrated with an adaptive Dormand-Prince 5(4) pair. The Larmor period
(a few ns) sets the step size, so a 30 us flight takes ~10^5 steps; the
stepping loop is compiled (see :mod:`sgbeam._kernels`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels as K
from .constants import CONSTANTS, PhysicalConstants
from .fields import FieldDomainError, FieldModel, MultipoleField, MultipoleParams
from .forces import NO_IMAGE, ImageParams, image_coefficient, image_potential


class Status(enum.Enum):
    CompletedWindow = K.ST_COMPLETED
    ExitedRegion = K.ST_EXITED
    Crashed = K.ST_CRASHED
    StepFailure = K.ST_STEP_FAILURE


@dataclass(frozen=True)
class IonState:
    t: float
    r: np.ndarray
    v: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        for name in ("r", "v", "S"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.S])

    @classmethod
    def from_vector(cls, t: float, y) -> "IonState":
        y = np.asarray(y)
        return cls(float(t), y[0:3], y[3:6], y[6:9])

    def with_spin(self, S) -> "IonState":
        return replace(self, S=np.asarray(S, dtype=np.float64))


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-10
    # absolute tolerances for (position m, velocity m/s, spin)
    abs_tol: tuple[float, float, float] = (1e-13, 1e-10, 1e-12)
    max_step: float = math.inf  # s
    y_min: float | None = 2e-6  # crash height above the image surface; None disables
    y_max: float = math.inf  # leaving above this height -> ExitedRegion
    z_min: float = -math.inf
    z_max: float = math.inf  # crossing this plane -> CompletedWindow
    t_max: float = 1e-3  # s
    record_stride: int = 100
    renormalise_spin: bool = True
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not self.rel_tol > 0 or not all(a > 0 for a in self.abs_tol):
            raise ValueError("tolerances must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    def scaled(self, factor: float) -> "IntegratorOptions":
        """Same options with all tolerances multiplied by ``factor``."""
        return replace(self, rel_tol=self.rel_tol * factor,
                       abs_tol=tuple(a * factor for a in self.abs_tol))


@dataclass
class Trajectory:
    t: np.ndarray  # (n,)
    states: np.ndarray  # (n, 9): x y z vx vy vz Sx Sy Sz
    status: Status
    diagnostics: dict = field(default_factory=dict)

    @property
    def samples(self) -> list[IonState]:
        return [IonState.from_vector(t, y) for t, y in zip(self.t, self.states)]

    @property
    def initial(self) -> IonState:
        return IonState.from_vector(self.t[0], self.states[0])

    @property
    def final(self) -> IonState:
        return IonState.from_vector(self.t[-1], self.states[-1])

    @property
    def closest_approach(self) -> float:
        return self.diagnostics["closest_approach"]

    def final_angle(self, axis: int = 1) -> float:
        """Angle of the final velocity to the z-axis in the (axis, z) plane."""
        v = self.states[-1, 3:6]
        return math.atan2(v[axis], v[2])


def _kernel_args(model: FieldModel, image: ImageParams, const: PhysicalConstants, freeze_spin: bool = False):
    g_mub = const.electron_g_factor * const.bohr_magneton
    gamma = 0.0 if freeze_spin else const.gyromagnetic_ratio
    return K.full_args(model.flat, [g_mub, gamma, const.elementary_charge, const.ion_mass,
                                    float(image.enabled), float(image.surface_height),
                                    image_coefficient(const)])


def rhs(state: IonState, model: FieldModel, image: ImageParams = NO_IMAGE,
        const: PhysicalConstants = CONSTANTS) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dr/dt, dv/dt, dS/dt) at ``state``."""
    out = np.empty(9)
    if K.rhs(_kernel_args(model, image, const), state.t, state.to_vector(), out) != K.OK:
        raise FieldDomainError(f"state outside the model domain at r = {state.r.tolist()}")
    return out[0:3], out[3:6], out[6:9]


def conserved_energy(state: IonState, model: FieldModel, image: ImageParams = NO_IMAGE,
                     const: PhysicalConstants = CONSTANTS) -> float:
    """Kinetic + spin Zeeman + image energy (J), conserved for static curl-free B.

    The Zeeman term is +g mu_B S.B: the moment is antiparallel to the spin.
    """
    B = model.sample(state.r).B
    kinetic = 0.5 * const.ion_mass * float(state.v @ state.v)
    zeeman = const.electron_g_factor * const.bohr_magneton * float(state.S @ B)
    return kinetic + zeeman + image_potential(state.r[1], image, const)


def _crash_height(opts: IntegratorOptions, image: ImageParams) -> float:
    if opts.y_min is None:
        return -math.inf
    surface = image.surface_height if image.enabled else 0.0
    return surface + opts.y_min


def integrate(initial: IonState, model: FieldModel, image: ImageParams = NO_IMAGE,
              opts: IntegratorOptions = IntegratorOptions(), const: PhysicalConstants = CONSTANTS,
              freeze_spin: bool = False) -> Trajectory:
    """Integrate one ion until it leaves the window, crashes or reaches ``t_max``.

    ``freeze_spin`` switches precession off (S stays at its initial value).
    """
    args = _kernel_args(model, image, const, freeze_spin)
    atol = np.repeat(np.asarray(opts.abs_tol, dtype=np.float64), 3)
    ts, ys, status, n_acc, n_rej, spin_drift, y_close, t_close = K.integrate(
        args, float(initial.t), initial.to_vector(), atol, opts.rel_tol, opts.max_step,
        initial.t + opts.t_max, opts.max_steps, opts.record_stride, 1, 4, 2,
        _crash_height(opts, image), opts.y_max, opts.z_min, opts.z_max, 6, opts.renormalise_spin)
    traj = Trajectory(ts, ys, Status(status), {
        "n_steps": int(n_acc),
        "n_rejected": int(n_rej),
        "spin_norm_drift": float(spin_drift),
        "closest_approach": float(y_close),
        "t_closest": float(t_close),
        "max_out_of_plane": float(np.max(np.abs(ys[:, 0] - ys[0, 0]))),
    })
    traj.diagnostics["energy_drift"] = energy_drift(traj, model, image, const)
    return traj


def energy_drift(traj: Trajectory, model: FieldModel, image: ImageParams = NO_IMAGE,
                 const: PhysicalConstants = CONSTANTS) -> float:
    """Largest |E(t) - E(0)| / |E(0)| over the recorded samples."""
    energies = []
    for s in traj.samples:
        try:
            energies.append(conserved_energy(s, model, image, const))
        except FieldDomainError:
            break
    e = np.asarray(energies)
    if len(e) == 0 or e[0] == 0:
        return math.nan
    return float(np.max(np.abs(e - e[0])) / abs(e[0]))


def run_multipole_scenario(spins: Sequence, launch: IonState | Sequence[IonState], p: MultipoleParams,
                           window: float = 100e-6, opts: IntegratorOptions | None = None,
                           const: PhysicalConstants = CONSTANTS, freeze_spin: bool = False) -> list[Trajectory]:
    """Fly each launch state with each initial spin through the windowed multipole field.

    Launch states must start upstream of the window; integration stops at
    ``z = window/2 + margin`` where the field is already off. Returns the
    trajectories in launch-major, spin-minor order.
    """
    launches = [launch] if isinstance(launch, IonState) else list(launch)
    for s in launches:
        if not np.linalg.norm(s.v) > 0:
            raise ValueError("launch speed must be positive")
    model = MultipoleField(p, window)
    if opts is None:
        opts = IntegratorOptions(y_min=None, z_max=window / 2 + 1e-6, t_max=1e-3)
    out = []
    for s in launches:
        for spin in spins:
            out.append(integrate(s.with_spin(spin), model, NO_IMAGE, opts, const, freeze_spin))
    return out
