"""Monte Carlo beam ensembles.

Ions are drawn from a Gaussian source model, optionally focused so that the
averaged-model turning point lands in a narrow band, flown through the
field with either engine and reduced to per-spin statistics.

Random draws come from one root seed; ion ``i`` gets its own stream
``SeedSequence(seed, spawn_key=(k,))`` so results do not depend on the
number of workers. For the ``mixed_x`` preparation the two members of a
pair (``2k`` with spin +x, ``2k+1`` with spin -x) share the draw ``k``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adiabatic import (AdiabaticParams, UnreachableTargetError, integrate_adiabatic,
                        launch_height_for_turning_point)
from .constants import CONSTANTS, PhysicalConstants
from .dynamics import IntegratorOptions, IonState, Status, integrate
from .fields import FieldModel
from .forces import NO_IMAGE, ImageParams

SPIN_PREPARATIONS = ("plus_x", "minus_x", "plus_y", "minus_y", "mixed_x")
_SPINS = {
    "plus_x": np.array([0.5, 0.0, 0.0]),
    "minus_x": np.array([-0.5, 0.0, 0.0]),
    "plus_y": np.array([0.0, 0.5, 0.0]),
    "minus_y": np.array([0.0, -0.5, 0.0]),
}
WORKERS_ENV = "SGBEAM_WORKERS"


def emittance_floor(const: PhysicalConstants = CONSTANTS) -> float:
    """1D emittance (m rad sqrt(J)) of a minimum-uncertainty beam, sqrt(hbar^2 / 8m)."""
    return const.reduced_planck / math.sqrt(8 * const.ion_mass)


@dataclass(frozen=True)
class SourceParams:
    """Beam statistics; defaults are the improved-source column (0.1 eV Ca+)."""

    mean_speed: float = 700.0  # m/s
    axial_spread: float = 0.7  # m/s, sigma of the speed
    divergence: float = 215e-6  # rad, sigma of the angles
    emittance_1d: float = math.sqrt(0.13) * 1e-9 * 1e-3 * math.sqrt(1.602176634e-19)  # m rad sqrt(J)
    spin_preparation: str = "mixed_x"

    def __post_init__(self):
        if not self.mean_speed > 0:
            raise ValueError("mean_speed must be positive")
        if self.axial_spread < 0 or self.divergence < 0 or self.emittance_1d < 0:
            raise ValueError("spreads must be non-negative")
        if self.spin_preparation not in SPIN_PREPARATIONS:
            raise ValueError(f"spin_preparation must be one of {SPIN_PREPARATIONS}")
        # the quoted value is rounded to two digits, allow 1% below the floor
        if self.emittance_1d < 0.99 * emittance_floor():
            raise ValueError(f"emittance {self.emittance_1d:.3g} below the single-mode floor {emittance_floor():.3g}")

    def narrowed(self, factor: float = 0.7) -> "SourceParams":
        """Speed and angle spreads scaled by ``factor`` (0.7 gives 30% narrower)."""
        return SourceParams(self.mean_speed, self.axial_spread * factor, self.divergence * factor,
                            self.emittance_1d, self.spin_preparation)

    @property
    def energy(self) -> float:
        return 0.5 * CONSTANTS.ion_mass * self.mean_speed**2

    @property
    def waist(self) -> float:
        """Emittance-limited waist at the source divergence (m); zero for a parallel beam."""
        if self.divergence == 0:
            return 0.0
        return self.emittance_1d / (math.sqrt(self.energy) * self.divergence)


@dataclass(frozen=True)
class LaunchGeometry:
    """Mean launch point, incidence angle below the z-axis in the yz-plane and
    distance from the launch point to the beam waist along the beam."""

    position: tuple[float, float, float] = (0.0, 243.08e-6, 0.0)
    incidence: float = 0.054  # rad
    waist_offset: float = 0.0  # m

    def __post_init__(self):
        if len(self.position) != 3 or not all(math.isfinite(c) for c in self.position):
            raise ValueError("position must be a finite 3-vector")
        if not abs(self.incidence) < math.pi / 2:
            raise ValueError("incidence must lie in (-pi/2, pi/2)")
        if not math.isfinite(self.waist_offset):
            raise ValueError("waist_offset must be finite")

    def with_height(self, y: float) -> "LaunchGeometry":
        return LaunchGeometry((self.position[0], y, self.position[2]), self.incidence, self.waist_offset)


@dataclass(frozen=True)
class FocusSpec:
    """Focusing target. With ``jitter`` the aim points are spread uniformly over
    the band to model finite focusing precision; otherwise every ion aims at
    ``target`` and the band only sets the acceptance."""

    target: float = 20e-6  # m, closest approach above the surface
    tolerance: float = 0.25e-6  # m
    enabled: bool = True
    jitter: bool = False

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.target > 0:
            raise ValueError("target must be positive")


def _spin(src: SourceParams, i: int) -> np.ndarray:
    if src.spin_preparation == "mixed_x":
        return _SPINS["plus_x"] if i % 2 == 0 else _SPINS["minus_x"]
    return _SPINS[src.spin_preparation]


def _stream(src: SourceParams, seed: int, i: int) -> np.random.Generator:
    k = i // 2 if src.spin_preparation == "mixed_x" else i
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _draw(src: SourceParams, seed: int, i: int) -> dict:
    rng = _stream(src, seed, i)
    z = rng.standard_normal(5)
    return {
        "speed": src.mean_speed + src.axial_spread * z[0],
        "dtheta": src.divergence * z[1],
        "phi": src.divergence * z[2],
        "dx": src.waist * z[3],
        "dy": src.waist * z[4],
        "u": rng.uniform(-1.0, 1.0),
    }


def _state(geom: LaunchGeometry, d: dict, spin: np.ndarray, y_override: float | None = None) -> IonState:
    theta = geom.incidence + d["dtheta"]
    phi = d["phi"]
    speed = d["speed"]
    if not speed > 0:
        raise ValueError("sampled a non-positive speed")
    vhat = np.array([math.sin(phi), -math.sin(theta) * math.cos(phi), math.cos(theta) * math.cos(phi)])
    v0hat = np.array([0.0, -math.sin(geom.incidence), math.cos(geom.incidence)])
    # transverse offsets at the waist, perpendicular to the mean direction
    perp = np.array([0.0, math.cos(geom.incidence), math.sin(geom.incidence)])
    waist = np.asarray(geom.position) + geom.waist_offset * v0hat + d["dx"] * np.array([1.0, 0, 0]) + d["dy"] * perp
    r = waist - geom.waist_offset * vhat
    if y_override is not None:
        r[1] = y_override
    return IonState(0.0, r, speed * vhat, spin)


def sample_initial_states(src: SourceParams, geometry: LaunchGeometry, n: int, seed: int) -> list[IonState]:
    """Gaussian draws of speed, angles and waist offsets; spins per ``src.spin_preparation``."""
    if n <= 0:
        raise ValueError("n must be positive")
    return [_state(geometry, _draw(src, seed, i), _spin(src, i)) for i in range(n)]


def focus_initial_states(src: SourceParams, target: FocusSpec, p: AdiabaticParams, image: ImageParams,
                         n: int, seed: int, geometry: LaunchGeometry = LaunchGeometry(),
                         const: PhysicalConstants = CONSTANTS) -> list[IonState]:
    """Sampled states whose launch heights are chosen per ion so that the averaged
    motion turns at ``target.target`` (spread over the band with ``jitter``).

    Speed and angle draws are those of :func:`sample_initial_states`; only the
    height is replaced, so the energy spread is unchanged. The solve uses each
    ion's own spin and axial speed.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not target.enabled:
        return sample_initial_states(src, geometry, n, seed)
    out = []
    for i in range(n):
        d = _draw(src, seed, i)
        spin = _spin(src, i)
        if abs(abs(spin[0]) - 0.5) > 1e-12:
            raise ValueError("focusing uses the averaged model, which needs spins along +-x")
        theta = geometry.incidence + d["dtheta"]
        vz = d["speed"] * math.cos(theta)
        y_t = target.target + p.surface_height + (target.tolerance * d["u"] if target.jitter else 0.0)
        pi = p.with_vz0(vz).with_spin(float(spin[0]))
        try:
            h = launch_height_for_turning_point(y_t, d["speed"], theta, pi, image, const)
        except UnreachableTargetError as exc:
            raise UnreachableTargetError(f"ion {i}: {exc}") from exc
        out.append(_state(geometry, d, spin, y_override=h))
    return out


# --- execution ------------------------------------------------------------------


@dataclass(frozen=True)
class IonRecord:
    index: int
    spin: str
    initial: IonState
    final: IonState
    closest_approach: float
    status: Status
    adiabaticity: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status == Status.CompletedWindow


def spin_label(S) -> str:
    k = int(np.argmax(np.abs(S)))
    return ("+" if S[k] > 0 else "-") + "xyz"[k]


@dataclass
class EnsembleResult:
    records: list[IonRecord]
    seed: int | None
    engine: str
    angle_axis: int = 1
    focus: FocusSpec | None = None
    surface_height: float = 0.0

    def final_angles(self, spin: str | None = None, ok_only: bool = True) -> np.ndarray:
        a = self.angle_axis
        return np.array([math.atan2(r.final.v[a], r.final.v[2]) for r in self.records
                         if (spin is None or r.spin == spin) and (r.ok or not ok_only)])

    def closest_approaches(self, spin: str | None = None) -> np.ndarray:
        return np.array([r.closest_approach for r in self.records if spin is None or r.spin == spin])

    @property
    def spins(self) -> list[str]:
        return sorted({r.spin for r in self.records})

    def summary(self) -> dict:
        per_spin = {}
        for s in self.spins:
            ang = self.final_angles(s)
            ca = self.closest_approaches(s) - self.surface_height
            entry = {
                "count": int(sum(r.spin == s for r in self.records)),
                "completed": int(len(ang)),
                "mean_angle": float(ang.mean()) if len(ang) else None,
                "angle_spread": float(ang.std()) if len(ang) else None,
                "mean_closest_approach": float(ca.mean()),
                "closest_approach_spread": float(ca.std()),
                "closest_approach_iqr": float(np.subtract(*np.percentile(ca, [75, 25]))),
            }
            if self.focus is not None and self.focus.enabled:
                band = np.abs(ca - self.focus.target) <= self.focus.tolerance
                entry["fraction_in_focus"] = float(band.mean())
            per_spin[s] = entry
        separation, ratio = self.separation()
        counts = {st.name: sum(r.status == st for r in self.records) for st in Status}
        return {
            "engine": self.engine,
            "seed": self.seed,
            "n": len(self.records),
            "status_counts": counts,
            "crashed": counts[Status.Crashed.name],
            "per_spin": per_spin,
            "separation": separation,
            "resolution_ratio": ratio,
        }

    def separation(self) -> tuple[float | None, float | None]:
        """(|mean angle difference|, separation / mean spread) for exactly two spin populations."""
        spins = self.spins
        if len(spins) != 2:
            return None, None
        a, b = (self.final_angles(s) for s in spins)
        if len(a) == 0 or len(b) == 0:
            return None, None
        sep = float(abs(a.mean() - b.mean()))
        spread = 0.5 * (a.std() + b.std())
        return sep, (float(sep / spread) if spread > 0 else math.inf)

    @property
    def resolution_ratio(self) -> float | None:
        return self.separation()[1]

    def fraction_in_focus(self) -> float:
        if self.focus is None:
            raise ValueError("no focus specification attached")
        ca = self.closest_approaches() - self.surface_height
        return float((np.abs(ca - self.focus.target) <= self.focus.tolerance).mean())

    def velocity_histograms(self, bins: int = 40) -> dict:
        """Per spin: (counts, v_z edges, v_y edges) over the common range of completed ions."""
        ok = [r for r in self.records if r.ok]
        if not ok:
            return {}
        a = self.angle_axis
        vz = np.array([r.final.v[2] for r in ok])
        vt = np.array([r.final.v[a] for r in ok])
        rng = [[vz.min(), vz.max() + 1e-12], [vt.min(), vt.max() + 1e-12]]
        out = {}
        for s in self.spins:
            sel = np.array([r.spin == s for r in ok])
            h, ez, et = np.histogram2d(vz[sel], vt[sel], bins=bins, range=rng)
            out[s] = (h, ez, et)
        return out


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def _fly_full(i, s, model, image, opts, const):
    tr = integrate(s, model, image, opts, const)
    return IonRecord(i, spin_label(s.S), s, tr.final, tr.closest_approach, tr.status)


def _fly_adiabatic(i, s, p, image, opts, const):
    if abs(abs(s.S[0]) - 0.5) > 1e-9:
        raise ValueError(f"ion {i}: the averaged engine needs spins along +-x, got {s.S.tolist()}")
    pi = p.with_vz0(float(s.v[2])).with_spin(float(s.S[0]))
    tr = integrate_adiabatic([s.r[1], s.v[1], s.v[2], s.r[2]], pi, image, opts, const, t0=s.t)
    y, vy, vz, z = tr.final
    final = IonState(float(tr.t[-1]), [s.r[0], y, z], [s.v[0], vy, vz], s.S)
    return IonRecord(i, spin_label(s.S), s, final, tr.closest_approach, tr.status,
                     tr.diagnostics["adiabaticity"])


def run_ensemble(states: Sequence[IonState], engine: str = "adiabatic", model: FieldModel | None = None,
                 image: ImageParams = NO_IMAGE, opts: IntegratorOptions = IntegratorOptions(),
                 adiabatic: AdiabaticParams | None = None, workers: int | None = None,
                 const: PhysicalConstants = CONSTANTS, seed: int | None = None,
                 focus: FocusSpec | None = None, angle_axis: int = 1) -> EnsembleResult:
    """Fly every state and collect records in input order.

    ``engine="full"`` needs ``model``; ``engine="adiabatic"`` needs
    ``adiabatic`` (its ``vz0`` and ``spin_x0`` are replaced per ion).
    Crashes are recorded, not raised.
    """
    states = list(states)
    if not states:
        raise ValueError("states must be non-empty")
    if engine == "full":
        if model is None:
            raise ValueError("the full engine needs a field model")
        job = lambda i, s: _fly_full(i, s, model, image, opts, const)  # noqa: E731
    elif engine == "adiabatic":
        if adiabatic is None:
            raise ValueError("the adiabatic engine needs AdiabaticParams")
        job = lambda i, s: _fly_adiabatic(i, s, adiabatic, image, opts, const)  # noqa: E731
    else:
        raise ValueError(f"unknown engine {engine!r}")
    workers = default_workers() if workers is None else workers
    if workers <= 1:
        records = [job(i, s) for i, s in enumerate(states)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, range(len(states)), states))
    surface = adiabatic.surface_height if engine == "adiabatic" else image.surface_height
    return EnsembleResult(records, seed, engine, angle_axis, focus, surface)


@dataclass(frozen=True)
class CurvePoint:
    vy0: float
    spin_x0: float
    closest_approach: float
    status: Status
    truncated: bool = False


def closest_approach_curve(src: SourceParams, p: AdiabaticParams, image: ImageParams, vy0_values: Sequence[float],
                           launch_height: float, opts: IntegratorOptions = IntegratorOptions(z_max=20e-3, t_max=60e-6),
                           const: PhysicalConstants = CONSTANTS) -> list[CurvePoint]:
    """Closest approach against initial vertical velocity for both spin branches.

    Every point starts at ``launch_height`` with speed ``src.mean_speed``.
    Points are visited in order of increasing |v_y0|; after the first crash
    in a branch the remaining points of that branch are marked truncated.
    """
    order = sorted(vy0_values, key=abs)
    out = []
    for spin in (0.5, -0.5):
        crashed = False
        for vy0 in order:
            if not abs(vy0) < src.mean_speed:
                raise ValueError("|v_y0| must be below the beam speed")
            vz0 = math.sqrt(src.mean_speed**2 - vy0**2)
            if crashed:
                out.append(CurvePoint(vy0, spin, math.nan, Status.Crashed, True))
                continue
            tr = integrate_adiabatic([launch_height, vy0, vz0], p.with_vz0(vz0).with_spin(spin), image, opts, const)
            crashed = tr.status == Status.Crashed
            out.append(CurvePoint(vy0, spin, tr.closest_approach, tr.status))
    return out


@dataclass(frozen=True)
class SpotCheck:
    indices: tuple[int, ...]
    vy_full: np.ndarray
    vy_adiabatic: np.ndarray
    angle_full: np.ndarray
    angle_adiabatic: np.ndarray

    @property
    def max_relative_vy(self) -> float:
        return float(np.max(np.abs(self.vy_adiabatic - self.vy_full) / np.abs(self.vy_full)))

    @property
    def max_angle_difference(self) -> float:
        return float(np.max(np.abs(self.angle_adiabatic - self.angle_full)))

    def to_dict(self) -> dict:
        return {"indices": list(self.indices), "n": len(self.indices),
                "max_relative_vy": self.max_relative_vy, "max_angle_difference": self.max_angle_difference}


def spot_check(result: EnsembleResult, model: FieldModel, image: ImageParams, n: int = 20, seed: int = 0,
               opts: IntegratorOptions = IntegratorOptions(), workers: int | None = None,
               const: PhysicalConstants = CONSTANTS) -> SpotCheck:
    """Re-fly ``n`` randomly chosen completed members of an averaged-model run with the full engine."""
    if result.engine != "adiabatic":
        raise ValueError("spot checks compare an adiabatic ensemble against the full engine")
    ok = [r for r in result.records if r.ok]
    if len(ok) < n:
        raise ValueError(f"only {len(ok)} completed ions, need {n}")
    pick = sorted(np.random.default_rng(seed).choice(len(ok), size=n, replace=False))
    chosen = [ok[k] for k in pick]
    full = run_ensemble([r.initial for r in chosen], "full", model, image, opts, workers=workers, const=const)
    bad = [r.index for r, f in zip(chosen, full.records) if not f.ok]
    if bad:
        raise RuntimeError(f"full engine did not complete ions {bad}")
    a = result.angle_axis
    ang = lambda recs: np.array([math.atan2(r.final.v[a], r.final.v[2]) for r in recs])  # noqa: E731
    return SpotCheck(tuple(r.index for r in chosen),
                     np.array([f.final.v[a] for f in full.records]), np.array([r.final.v[a] for r in chosen]),
                     ang(full.records), ang(chosen))
