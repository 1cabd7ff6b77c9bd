"""Run configuration files.

A config is TOML text. Every dimensioned value is a string with an explicit
unit (``current = "1 A"``, ``pitch = "50 um"``); bare numbers are accepted
only for dimensionless entries such as ``rel_tol`` or ``n_max``. Exactly one
scenario section (``[multipole]``, ``[two_wire]`` or ``[grating]``) must be
present. Unknown sections and keys are rejected.

Parsed values are stored in SI. :func:`dump_config` writes them back with SI
units so that parse(dump(cfg)) == cfg exactly.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .adiabatic import AdiabaticParams, launch_height_for_turning_point
from .constants import AMU, CONSTANTS, PhysicalConstants
from .dynamics import IntegratorOptions, IonState
from .ensemble import SPIN_PREPARATIONS, FocusSpec, LaunchGeometry, SourceParams
from .fields import (CompositeField, FieldModel, GratingBiotSavartField, GratingFourierField, GratingParams,
                     MultipoleField, MultipoleParams, TwoWireField, TwoWireParams, UniformField, WindowedField)
from .forces import ImageParams
from .units import UnitError, parse_quantity

SCENARIOS = ("multipole", "two_wire", "grating")
SI_UNIT = {
    "field": "T", "current": "A", "length": "m", "velocity": "m/s", "energy": "J", "angle": "rad",
    "time": "s", "mass": "kg", "gradient": "T/m", "emittance": "m rad sqrt(J)",
}
SPIN_LABELS = {
    "+x": (0.5, 0.0, 0.0), "-x": (-0.5, 0.0, 0.0),
    "+y": (0.0, 0.5, 0.0), "-y": (0.0, -0.5, 0.0),
    "+z": (0.0, 0.0, 0.5), "-z": (0.0, 0.0, -0.5),
    "0": (0.0, 0.0, 0.0),
}


class ConfigError(ValueError):
    pass


_REQ = object()


@dataclass(frozen=True)
class Key:
    kind: str  # quantity, vector, int, float, bool, str, spins
    dim: str | None = None
    default: Any = None  # _REQ marks a required key, None an optional one
    choices: tuple[str, ...] | None = None


def Q(dim, default=None):
    return Key("quantity", dim, default)


SCHEMA: dict[str, dict[str, Key]] = {
    "": {
        "title": Key("str", default=""),
        "engine": Key("str", default="full", choices=("full", "adiabatic")),
        "seed": Key("int", default=0),
    },
    "constants": {
        "g_factor": Key("float", default=CONSTANTS.electron_g_factor),
        "ion_mass": Q("mass", CONSTANTS.ion_mass),
    },
    "multipole": {
        "a2": Q("field", _REQ), "a3": Q("field", _REQ), "a4": Q("field", _REQ),
        "y0": Q("length", _REQ),
        "window": Q("length", 100e-6),
        "bias": Q("field", 0.0),
    },
    "two_wire": {
        "current": Q("current", _REQ), "d": Q("length", _REQ),
        "width": Q("length", 0.0), "thickness": Q("length", 0.0), "length": Q("length", math.inf),
        "mode": Key("str", default="thin", choices=("thin", "finite")),
        "window": Q("length", 100e-6),
        "bias": Q("field", 0.0),
    },
    "grating": {
        "current": Q("current", _REQ), "width": Q("length", _REQ),
        "thickness": Q("length", _REQ), "pitch": Q("length", _REQ),
        "n_max": Key("int", default=9),
        "b1_surface": Q("field"),
        "surface_height": Q("length", 0.0),
        "bias": Q("field", 0.0),
        "model": Key("str", default="fourier", choices=("fourier", "biot_savart")),
        "n_wires": Key("int", default=401),
    },
    "image": {
        "enabled": Key("bool"),
        "surface_height": Q("length"),
    },
    "launch": {
        "position": Key("vector", "length", (0.0, 0.0, 0.0)),
        "speed": Q("velocity"),
        "energy": Q("energy"),
        "incidence": Q("angle", 0.0),
        "spins": Key("spins", default=("+x", "-x")),
        "turning_point": Q("length"),
        "bundle_rays": Key("int", default=1),
        "bundle_half_angle": Q("angle", 0.0),
        "bundle_plane": Key("str", default="xz", choices=("xz", "yz")),
        "bundle_focus": Key("vector", "length", (0.0, 0.0, 0.0)),
    },
    "integrator": {
        "rel_tol": Key("float", default=1e-10),
        "abs_tol_position": Q("length", 1e-13),
        "abs_tol_velocity": Q("velocity", 1e-10),
        "abs_tol_spin": Key("float", default=1e-12),
        "max_step": Q("time", math.inf),
        "crash_check": Key("bool", default=True),
        "y_min": Q("length", 2e-6),
        "y_max": Q("length", math.inf),
        "z_min": Q("length", -math.inf),
        "z_max": Q("length", math.inf),
        "t_max": Q("time", 1e-3),
        "record_stride": Key("int", default=100),
        "renormalise_spin": Key("bool", default=True),
        "max_steps": Key("int", default=50_000_000),
        "dynamic_vz": Key("bool", default=False),
    },
    "source": {
        "axial_spread": Q("velocity", 0.7),
        "divergence": Q("angle", 215e-6),
        "emittance_1d": Q("emittance", SourceParams().emittance_1d),
        "spin_preparation": Key("str", default="mixed_x", choices=SPIN_PREPARATIONS),
        "n": Key("int", default=10_000),
        "narrow_factor": Key("float", default=1.0),
        "waist_offset": Q("length", 0.0),
    },
    "focus": {
        "target": Q("length", _REQ),
        "tolerance": Q("length", 0.25e-6),
        "enabled": Key("bool", default=True),
        "jitter": Key("bool", default=False),
    },
    "sweep": {
        "vy0_min": Q("velocity", _REQ),
        "vy0_max": Q("velocity", _REQ),
        "points": Key("int", default=41),
    },
    "output": {
        "directory": Key("str", default="."),
        "prefix": Key("str", default="run"),
        "histogram_bins": Key("int", default=40),
    },
}

# sections that are filled with defaults when absent
_DEFAULTED = ("", "constants", "integrator", "output")


def _line_of(text: str, section: str, key: str | None) -> str:
    lines = text.splitlines()
    current = ""
    for n, line in enumerate(lines, 1):
        s = line.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", s)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return f"line {n}"
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", s):
            return f"line {n}"
    return "unknown line"


def _convert(section: str, key: str, spec: Key, raw, text: str):
    where = f"[{section}] {key}" if section else key
    loc = _line_of(text, section, key)

    def fail(msg):
        raise ConfigError(f"{where} ({loc}): {msg}")

    if spec.kind == "quantity":
        if isinstance(raw, bool) or not isinstance(raw, str):
            fail(f"expected a string with a {spec.dim} unit, got {raw!r}; units are mandatory")
        try:
            return parse_quantity(raw, spec.dim)
        except UnitError as exc:
            fail(str(exc))
    if spec.kind == "vector":
        if not isinstance(raw, list) or len(raw) != 3:
            fail("expected a list of three quantities")
        return tuple(_convert(section, key, Key("quantity", spec.dim), v, text) for v in raw)
    if spec.kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            fail(f"expected an integer, got {raw!r}")
        return raw
    if spec.kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            fail(f"expected a number, got {raw!r}")
        return float(raw)
    if spec.kind == "bool":
        if not isinstance(raw, bool):
            fail(f"expected true or false, got {raw!r}")
        return raw
    if spec.kind == "str":
        if not isinstance(raw, str):
            fail(f"expected a string, got {raw!r}")
        if spec.choices and raw not in spec.choices:
            fail(f"must be one of {', '.join(spec.choices)}")
        return raw
    if spec.kind == "spins":
        if not isinstance(raw, list) or not raw or not all(isinstance(s, str) for s in raw):
            fail("expected a non-empty list of spin labels")
        bad = [s for s in raw if s not in SPIN_LABELS]
        if bad:
            fail(f"unknown spin labels {bad}; use {', '.join(SPIN_LABELS)}")
        return tuple(raw)
    raise AssertionError(spec.kind)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``sections`` maps section name to SI values."""

    scenario: str
    sections: dict

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def has(self, section: str) -> bool:
        return section in self.sections

    # --- builders -------------------------------------------------------------------

    @property
    def engine(self) -> str:
        return self.sections[""]["engine"]

    @property
    def seed(self) -> int:
        return self.sections[""]["seed"]

    @property
    def constants(self) -> PhysicalConstants:
        c = self.sections["constants"]
        return PhysicalConstants(**{**vars(CONSTANTS), "electron_g_factor": c["g_factor"], "ion_mass": c["ion_mass"]})

    @property
    def scenario_params(self) -> dict:
        return self.sections[self.scenario]

    def grating_params(self) -> GratingParams:
        g = self.sections["grating"]
        return GratingParams(g["current"], g["width"], g["thickness"], g["pitch"], g["n_max"],
                             g["surface_height"], g["b1_surface"])

    def field_model(self) -> FieldModel:
        s = self.scenario_params
        if self.scenario == "multipole":
            model = MultipoleField(MultipoleParams(s["a2"], s["a3"], s["a4"], s["y0"]), s["window"])
        elif self.scenario == "two_wire":
            p = TwoWireParams(s["current"], s["d"], s["width"], s["thickness"], s["length"])
            model = WindowedField(TwoWireField(p, s["mode"]), -s["window"] / 2, s["window"] / 2)
        else:
            gp = self.grating_params()
            if s["model"] == "fourier":
                model = GratingFourierField(gp)
            else:
                model = GratingBiotSavartField(gp, s["n_wires"])
        if s["bias"] != 0.0:
            model = CompositeField([UniformField([s["bias"], 0.0, 0.0]), model])
        return model

    def image_params(self) -> ImageParams:
        im = self.sections.get("image", {})
        enabled = im.get("enabled")
        if enabled is None:
            enabled = self.scenario == "grating"
        surface = im.get("surface_height")
        if surface is None:
            surface = self.sections["grating"]["surface_height"] if self.scenario == "grating" else 0.0
        return ImageParams(surface, enabled)

    def integrator_options(self) -> IntegratorOptions:
        i = self.sections["integrator"]
        return IntegratorOptions(
            rel_tol=i["rel_tol"],
            abs_tol=(i["abs_tol_position"], i["abs_tol_velocity"], i["abs_tol_spin"]),
            max_step=i["max_step"],
            y_min=i["y_min"] if i["crash_check"] else None,
            y_max=i["y_max"], z_min=i["z_min"], z_max=i["z_max"], t_max=i["t_max"],
            record_stride=i["record_stride"], renormalise_spin=i["renormalise_spin"],
            max_steps=i["max_steps"])

    @property
    def speed(self) -> float:
        la = self.sections["launch"]
        if la["speed"] is not None:
            return la["speed"]
        return math.sqrt(2 * la["energy"] / self.constants.ion_mass)

    def adiabatic_params(self, vz0: float | None = None, spin_x0: float = 0.5) -> AdiabaticParams:
        if self.scenario != "grating":
            raise ConfigError("the averaged model applies to the grating scenario only")
        if vz0 is None:
            vz0 = self.speed * math.cos(self.sections["launch"]["incidence"])
        return AdiabaticParams.for_grating(self.grating_params(), self.sections["grating"]["bias"], vz0, spin_x0,
                                           self.constants, self.sections["integrator"]["dynamic_vz"])

    def launch_height(self) -> float:
        """Launch y: the configured position, or the height whose spin-neutral
        averaged trajectory turns at ``turning_point``."""
        la = self.sections["launch"]
        if la["turning_point"] is None:
            return la["position"][1]
        p = self.adiabatic_params(spin_x0=0.0)
        return launch_height_for_turning_point(la["turning_point"] + p.surface_height, self.speed,
                                               la["incidence"], p, self.image_params(), self.constants)

    def geometry(self) -> LaunchGeometry:
        la = self.sections["launch"]
        x, _, z = la["position"]
        waist = self.sections["source"]["waist_offset"] if "source" in self.sections else 0.0
        return LaunchGeometry((x, self.launch_height(), z), la["incidence"], waist)

    def launch_states(self) -> list[tuple[str, int, IonState]]:
        """(spin label, ray index, state) for every ray and configured spin."""
        la = self.sections["launch"]
        theta = la["incidence"]
        base = np.array([0.0, -math.sin(theta), math.cos(theta)])
        r0 = np.array(self.geometry().position)
        out = []
        n = la["bundle_rays"]
        angles = np.linspace(-la["bundle_half_angle"], la["bundle_half_angle"], n) if n > 1 else [0.0]
        for k, a in enumerate(angles):
            if n > 1:
                d = _rotate(base, la["bundle_plane"], a)
                focus = np.array(la["bundle_focus"])
                r = focus + (r0[2] - focus[2]) / d[2] * d
            else:
                d, r = base, r0
            for label in la["spins"]:
                out.append((label, k, IonState(0.0, r, self.speed * d, SPIN_LABELS[label])))
        return out

    def source_params(self) -> SourceParams:
        s = self.sections["source"]
        src = SourceParams(self.speed, s["axial_spread"], s["divergence"], s["emittance_1d"], s["spin_preparation"])
        return src if s["narrow_factor"] == 1.0 else src.narrowed(s["narrow_factor"])

    def focus_spec(self) -> FocusSpec | None:
        f = self.sections.get("focus")
        if f is None:
            return None
        return FocusSpec(f["target"], f["tolerance"], f["enabled"], f["jitter"])

    def output(self) -> dict:
        return self.sections["output"]


def _rotate(v, plane, a):
    c, s = math.cos(a), math.sin(a)
    if plane == "xz":
        return np.array([c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]])
    return np.array([v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]])


def _required_keys() -> list[str]:
    out = ["one scenario section of [" + "], [".join(SCENARIOS) + "]"]
    out.append("[launch] speed or energy")
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; raises :class:`ConfigError` naming the problem."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    if not doc:
        raise ConfigError("empty config; required: " + "; ".join(_required_keys()))

    raw_sections: dict[str, dict] = {"": {}}
    for k, v in doc.items():
        if isinstance(v, dict):
            if k not in SCHEMA or k == "":
                raise ConfigError(f"unknown section [{k}] ({_line_of(text, k, None)})")
            raw_sections[k] = v
        else:
            raw_sections[""][k] = v

    present = [s for s in SCENARIOS if s in raw_sections]
    if len(present) != 1:
        raise ConfigError(f"exactly one scenario section of [{'], ['.join(SCENARIOS)}] is required, "
                          f"found {len(present)}" + (f": {', '.join(present)}" if present else ""))
    scenario = present[0]

    sections: dict[str, dict] = {}
    for name in list(raw_sections) + [s for s in _DEFAULTED if s not in raw_sections]:
        raw = raw_sections.get(name, {})
        schema = SCHEMA[name]
        for k in raw:
            if k not in schema:
                where = f"[{name}]" if name else "top level"
                raise ConfigError(f"unknown key {k!r} in {where} ({_line_of(text, name, k)}); "
                                  f"allowed: {', '.join(schema)}")
        vals = {}
        missing = []
        for k, spec in schema.items():
            if k in raw:
                vals[k] = _convert(name, k, spec, raw[k], text)
            elif spec.default is _REQ:
                missing.append(k)
            else:
                vals[k] = spec.default
        if missing:
            raise ConfigError(f"[{name}] is missing required keys: {', '.join(missing)}")
        sections[name] = vals

    _validate(scenario, sections)
    return RunConfig(scenario, sections)


def _validate(scenario: str, s: dict):
    if "launch" not in s:
        raise ConfigError("missing [launch] section; required: " + "; ".join(_required_keys()[1:]))
    la = s["launch"]
    if (la["speed"] is None) == (la["energy"] is None):
        raise ConfigError("[launch] needs exactly one of speed or energy")
    if la["speed"] is not None and not la["speed"] > 0:
        raise ConfigError("[launch] speed must be positive")
    if la["energy"] is not None and not la["energy"] > 0:
        raise ConfigError("[launch] energy must be positive")
    if la["bundle_rays"] < 1:
        raise ConfigError("[launch] bundle_rays must be >= 1")
    if la["turning_point"] is not None and scenario != "grating":
        raise ConfigError("[launch] turning_point is only defined for the grating scenario")
    if s[""]["engine"] == "adiabatic" and scenario != "grating":
        raise ConfigError("engine = 'adiabatic' requires the grating scenario")
    if "focus" in s and scenario != "grating":
        raise ConfigError("[focus] requires the grating scenario")
    if "sweep" in s and scenario != "grating":
        raise ConfigError("[sweep] requires the grating scenario")
    if "source" in s:
        if s["source"]["n"] < 1:
            raise ConfigError("[source] n must be >= 1")
        if not s["source"]["narrow_factor"] > 0:
            raise ConfigError("[source] narrow_factor must be positive")
    if s["integrator"]["record_stride"] < 1:
        raise ConfigError("[integrator] record_stride must be >= 1")
    try:
        if scenario == "multipole":
            m = s["multipole"]
            MultipoleParams(m["a2"], m["a3"], m["a4"], m["y0"])
        elif scenario == "two_wire":
            w = s["two_wire"]
            TwoWireParams(w["current"], w["d"], w["width"], w["thickness"], w["length"])
        else:
            g = s["grating"]
            GratingParams(g["current"], g["width"], g["thickness"], g["pitch"], g["n_max"],
                          g["surface_height"], g["b1_surface"])
        IntegratorOptions(rel_tol=s["integrator"]["rel_tol"],
                          abs_tol=(s["integrator"]["abs_tol_position"], s["integrator"]["abs_tol_velocity"],
                                   s["integrator"]["abs_tol_spin"]))
        if "source" in s:
            src = s["source"]
            SourceParams(1.0, src["axial_spread"], src["divergence"], src["emittance_1d"], src["spin_preparation"])
        if "focus" in s:
            FocusSpec(s["focus"]["target"], s["focus"]["tolerance"], s["focus"]["enabled"])
    except ValueError as exc:
        raise ConfigError(f"[{scenario}] invalid parameters: {exc}") from None


def _emit(spec: Key, value):
    if spec.kind == "quantity":
        return f"{value!r} {SI_UNIT[spec.dim]}"
    if spec.kind == "vector":
        return [f"{v!r} {SI_UNIT[spec.dim]}" for v in value]
    if spec.kind == "spins":
        return list(value)
    return value


def dump_config(cfg: RunConfig) -> str:
    """Serialise with SI units; optional entries that are unset are omitted."""
    doc: dict[str, Any] = {}
    for k, v in cfg.sections[""].items():
        doc[k] = _emit(SCHEMA[""][k], v)
    for name, vals in cfg.sections.items():
        if name == "":
            continue
        doc[name] = {k: _emit(SCHEMA[name][k], v) for k, v in vals.items() if v is not None}
    return tomli_w.dumps(doc)


def bundled_configs() -> list[str]:
    return sorted(p.name for p in resources.files("sgbeam").joinpath("configs").iterdir()
                  if p.name.endswith(".cfg"))


def resolve_config_path(name: str) -> Path:
    """A path on disk, or the name of a bundled config such as ``fig4.cfg``."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("sgbeam").joinpath("configs", p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config {name!r} not found (bundled: {', '.join(bundled_configs())})")


def load_config(name: str) -> RunConfig:
    return parse_config(resolve_config_path(name).read_text())
