"""Analytic magnetostatic field models.

Each model returns a :class:`FieldSample` holding B and its Jacobian
``J[i, j] = dB_i/dx_j``. Models are immutable; evaluation goes through the
compiled kernels in :mod:`sgbeam._kernels` so that the trajectory integrator
and the Python API share one implementation.

Coordinates follow the chip geometry: ``y`` is the height above the chip
(top wire surface at ``y = 0``), the beam travels along ``z``. Grating wires
run along ``x``; the wire pair runs along ``z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .constants import CONSTANTS


class FieldDomainError(ValueError):
    """Raised when a field model is evaluated where it is not valid."""


@dataclass(frozen=True)
class FieldSample:
    B: np.ndarray  # T
    J: np.ndarray  # T/m, J[i, j] = dB_i/dx_j

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.B))

    @property
    def gradient_scale(self) -> float:
        """Spectral norm of the Jacobian (T/m)."""
        return float(np.linalg.norm(self.J, 2))

    def __add__(self, other: "FieldSample") -> "FieldSample":
        return FieldSample(self.B + other.B, self.J + other.J)


@dataclass(frozen=True)
class MultipoleParams:
    a2: float  # T, quadrupole
    a3: float  # T, hexapole
    a4: float  # T, octupole
    y0: float  # m, half gap

    def __post_init__(self):
        if not self.y0 > 0:
            raise ValueError("y0 must be positive")

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """Prefactors of xy, x(4z^2 - x^2 - y^2) and xy(x^2 - y^2) in the scalar potential."""
        c2 = self.a2 / (2 * self.y0) * math.sqrt(15 / (4 * math.pi))
        c3 = self.a3 / (3 * self.y0**2) * math.sqrt(21 / (32 * math.pi))
        c4 = self.a4 / (4 * self.y0**3) * math.sqrt(315 / (16 * math.pi))
        return c2, c3, c4


@dataclass(frozen=True)
class TwoWireParams:
    """Two parallel wires along z at x = +-d, equal currents in the same direction.

    The thin-wire model is valid for wire length L >> d.
    """

    current: float  # A per wire
    d: float  # m, beam axis to wire centre
    width: float = 0.0  # m, along x
    thickness: float = 0.0  # m, along y
    length: float = math.inf  # m

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("d must be positive")
        if self.width < 0 or self.thickness < 0:
            raise ValueError("wire dimensions must be non-negative")


@dataclass(frozen=True)
class GratingParams:
    """Periodic array of wires along x with alternating currents.

    Wire centres sit at z = k * pitch carrying (-1)^k * current; the wire
    cross-sections occupy ``surface_height - thickness < y < surface_height``.

    ``b1_surface`` optionally pins the first-harmonic amplitude at the top
    wire surface. All harmonics are then rescaled together, which is the
    same as running the grating at an equivalent current.
    """

    current: float  # A
    width: float  # m
    thickness: float  # m
    pitch: float  # m, centre-to-centre spacing of opposite-current wires
    n_max: int = 9
    surface_height: float = 0.0
    b1_surface: float | None = None  # T

    def __post_init__(self):
        if not 0 < self.width < self.pitch:
            raise ValueError("need 0 < width < pitch")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if self.n_max < 1 or self.n_max % 2 == 0:
            raise ValueError("n_max must be odd and >= 1")

    @property
    def kappa(self) -> float:
        return math.pi / self.pitch

    def potential_coefficient(self, n: int, current: float | None = None) -> float:
        """A_n of the scalar potential (T m) for a uniform current density."""
        if n % 2 == 0:
            return 0.0
        current = self.current if current is None else current
        mu0 = CONSTANTS.vacuum_permeability
        nk = n * self.kappa
        return (2 * mu0 * current / (math.pi * n)
                * math.sin(nk * self.width / 2) / (nk * self.width)
                * -math.expm1(-nk * self.thickness) / (nk * self.thickness))

    @property
    def equivalent_current(self) -> float:
        if self.b1_surface is None:
            return self.current
        return self.current * self.b1_surface / (self.kappa * self.potential_coefficient(1))

    def harmonics(self) -> list[tuple[int, float]]:
        """(n, B_n) with B_n = n kappa A_n the surface amplitude of harmonic n."""
        i_eff = self.equivalent_current
        return [(n, n * self.kappa * self.potential_coefficient(n, i_eff))
                for n in range(1, self.n_max + 1, 2)]

    @property
    def b1(self) -> float:
        return self.harmonics()[0][1]


Component = tuple[int, float, float, np.ndarray]  # kind, zmin, zmax, params


class FieldModel:
    """Base class: a sum of compiled components."""

    components: tuple[Component, ...] = ()

    @cached_property
    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        kinds = np.array([c[0] for c in self.components], dtype=np.int64)
        windows = np.array([[c[1], c[2]] for c in self.components], dtype=np.float64).reshape(-1, 2)
        sizes = [len(c[3]) for c in self.components]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        params = (np.concatenate([c[3] for c in self.components]).astype(np.float64)
                  if self.components else np.zeros(0))
        return kinds, windows, offsets, params

    def sample(self, r) -> FieldSample:
        r = np.asarray(r, dtype=np.float64)
        B = np.zeros(3)
        J = np.zeros((3, 3))
        if K.eval_field(*self.flat, r, B, J) != K.OK:
            raise FieldDomainError(f"{type(self).__name__} is not defined at r = {r.tolist()}")
        return FieldSample(B, J)

    def sample_many(self, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised evaluation; returns (B[n,3], J[n,3,3], ok[n])."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        Bs = np.zeros((len(pts), 3))
        Js = np.zeros((len(pts), 3, 3))
        status = np.zeros(len(pts), dtype=np.int64)
        K.eval_field_many(*self.flat, pts, Bs, Js, status)
        return Bs, Js, status == K.OK

    def __call__(self, r) -> FieldSample:
        return self.sample(r)


class UniformField(FieldModel):
    def __init__(self, B):
        self.B = np.asarray(B, dtype=np.float64).copy()
        self.components = ((K.K_UNIFORM, -math.inf, math.inf, self.B),)


class MultipoleField(FieldModel):
    """Quadrupole + hexapole + octupole edge field, switched on only for |z| <= window/2.

    ``window=None`` removes the cut-off.
    """

    def __init__(self, params: MultipoleParams, window: float | None = 100e-6):
        self.params = params
        self.window = window
        half = math.inf if window is None else window / 2
        self.components = ((K.K_MULTIPOLE, -half, half, np.array(params.coefficients)),)


def _filament_grid(n1: int, n2: int, size1: float, size2: float):
    u = (np.arange(n1) + 0.5) / n1 - 0.5
    v = (np.arange(n2) + 0.5) / n2 - 0.5
    a, b = np.meshgrid(u * size1, v * size2, indexing="ij")
    return a.ravel(), b.ravel()


def _line_params(c1, c2, currents, rects) -> np.ndarray:
    k = CONSTANTS.vacuum_permeability / (2 * math.pi) * np.asarray(currents, dtype=np.float64)
    fil = np.column_stack([c1, c2, k]).ravel()
    rect = np.asarray(rects, dtype=np.float64).reshape(-1, 4).ravel()
    return np.concatenate([[len(k), len(rect) // 4], fil, rect])


class TwoWireField(FieldModel):
    """Wire pair along z. ``mode="thin"`` uses line currents, ``"finite"`` subdivides
    each rectangular cross-section into ``filaments`` line currents."""

    def __init__(self, params: TwoWireParams, mode: str = "thin", filaments: tuple[int, int] = (16, 8)):
        if mode not in ("thin", "finite"):
            raise ValueError(f"unknown two-wire mode {mode!r}")
        if mode == "finite" and (params.width <= 0 or params.thickness <= 0):
            raise ValueError("finite mode needs positive wire width and thickness")
        self.params = params
        self.mode = mode
        p = params
        rects = []
        if p.width > 0 and p.thickness > 0:
            rects = [[s * p.d, 0.0, p.width / 2, p.thickness / 2] for s in (-1, 1)]
        if mode == "thin":
            xs, ys, cur = [-p.d, p.d], [0.0, 0.0], [p.current, p.current]
        else:
            du, dv = _filament_grid(*filaments, p.width, p.thickness)
            xs = np.concatenate([du - p.d, du + p.d])
            ys = np.concatenate([dv, dv])
            cur = np.full(len(xs), p.current / len(du))
        self.components = ((K.K_ZWIRES, -math.inf, math.inf, _line_params(xs, ys, cur, rects)),)


class GratingFourierField(FieldModel):
    """Odd-harmonic Fourier series of the grating field above the wire surface."""

    def __init__(self, params: GratingParams):
        self.params = params
        h = params.harmonics()
        packed = np.concatenate([[params.kappa, params.surface_height, len(h)], np.ravel(h)])
        self.components = ((K.K_GRATING, -math.inf, math.inf, packed),)


class GratingBiotSavartField(FieldModel):
    """Direct summation over ``n_wires`` rectangular wires, each split into
    ``filaments = (n_width, n_thickness)`` line currents."""

    def __init__(self, params: GratingParams, n_wires: int, filaments: tuple[int, int] = (32, 4)):
        if n_wires < 1:
            raise ValueError("n_wires must be >= 1")
        self.params = params
        self.n_wires = n_wires
        self.filaments = filaments
        p = params
        ks = np.arange(n_wires) - n_wires // 2
        zc = ks * p.pitch
        yc = p.surface_height - p.thickness / 2
        sign = np.where(ks % 2 == 0, 1.0, -1.0)
        dz, dy = _filament_grid(filaments[0], filaments[1], p.width, p.thickness)
        zs = (zc[:, None] + dz[None, :]).ravel()
        ys = np.broadcast_to(yc + dy, (n_wires, len(dy))).ravel()
        cur = (sign[:, None] * np.full(len(dz), p.equivalent_current / len(dz))[None, :]).ravel()
        rects = [[yc, z, p.thickness / 2, p.width / 2] for z in zc]
        self.components = ((K.K_XWIRES, -math.inf, math.inf, _line_params(ys, zs, cur, rects)),)


class CompositeField(FieldModel):
    def __init__(self, models: Sequence[FieldModel]):
        self.models = tuple(models)
        self.components = tuple(c for m in self.models for c in m.components)


class WindowedField(FieldModel):
    """Restrict a model to zmin <= z <= zmax (hard on/off)."""

    def __init__(self, model: FieldModel, zmin: float, zmax: float):
        self.model = model
        self.components = tuple(
            (k, max(lo, zmin), min(hi, zmax), p) for k, lo, hi, p in model.components)


# --- functional API -------------------------------------------------------------


def multipole_field(r, p: MultipoleParams) -> FieldSample:
    """Field of the multipole potential, without the interaction window."""
    return MultipoleField(p, window=None).sample(r)


def two_wire_field(r, p: TwoWireParams, mode: str = "thin") -> FieldSample:
    return TwoWireField(p, mode).sample(r)


def grating_field_fourier(y: float, z: float, p: GratingParams) -> FieldSample:
    return GratingFourierField(p).sample((0.0, y, z))


def grating_field_biot_savart(r, p: GratingParams, n_wires: int,
                              filaments: tuple[int, int] | None = None,
                              rtol: float = 1e-3) -> FieldSample:
    """Biot-Savart field of a finite grating.

    Without explicit ``filaments`` the subdivision is doubled until |B| changes
    by less than ``rtol`` (relative) between refinements.
    """
    if filaments is not None:
        return GratingBiotSavartField(p, n_wires, filaments).sample(r)
    nw, nt = 8, 2
    prev = GratingBiotSavartField(p, n_wires, (nw, nt)).sample(r)
    for _ in range(8):
        nw, nt = 2 * nw, 2 * nt
        cur = GratingBiotSavartField(p, n_wires, (nw, nt)).sample(r)
        scale = max(np.linalg.norm(cur.B), 1e-300)
        if np.linalg.norm(cur.B - prev.B) <= rtol * scale:
            return cur
        prev = cur
    return cur


def compose_fields(models: Sequence[FieldModel]) -> CompositeField:
    return CompositeField(models)


@dataclass(frozen=True)
class MaxwellResiduals:
    div: float  # T/m
    curl: np.ndarray  # T/m
    jacobian_error: float  # max |J_fd - J| (T/m)
    jacobian_fd: np.ndarray = field(repr=False)
    scale: float = 0.0  # ||J||, for relative comparisons

    @property
    def relative(self) -> float:
        worst = max(abs(self.div), float(np.max(np.abs(self.curl))), self.jacobian_error)
        return worst / self.scale if self.scale > 0 else worst


def check_maxwell(model: FieldModel, r, h: float) -> MaxwellResiduals:
    """Divergence, curl and Jacobian error from fourth-order central differences of B."""
    r = np.asarray(r, dtype=np.float64)
    J = model.sample(r).J
    Jfd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        b = [model.sample(r + s * e).B for s in (2, 1, -1, -2)]
        Jfd[:, j] = (-b[0] + 8 * b[1] - 8 * b[2] + b[3]) / (12 * h)
    curl = np.array([Jfd[2, 1] - Jfd[1, 2], Jfd[0, 2] - Jfd[2, 0], Jfd[1, 0] - Jfd[0, 1]])
    return MaxwellResiduals(
        div=float(np.trace(Jfd)),
        curl=curl,
        jacobian_error=float(np.max(np.abs(Jfd - J))),
        jacobian_fd=Jfd,
        scale=float(np.linalg.norm(J)),
    )
