"""Command-line driver: ``sgbeam {estimate,simulate,ensemble,field-check,sweep}``.

Configs are looked up on disk first, then among the bundled ones, so
``sgbeam simulate --config fig4.cfg`` works from any directory. Output goes
to ``--out``, else ``$SGBEAM_OUTPUT_DIR``, else the config's
``[output] directory``. ``$SGBEAM_WORKERS`` sets the ensemble pool width.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import estimators as est
from .adiabatic import (REDUCED_COLUMNS, TERM_COLUMNS, UnreachableTargetError, crash_bias_minimum,
                        integrate_adiabatic)
from .config import ConfigError, RunConfig, bundled_configs, load_config
from .constants import CONSTANTS, larmor_frequency, cyclotron_frequency
from .dynamics import Status, integrate
from .ensemble import (SourceParams, closest_approach_curve, focus_initial_states, run_ensemble, sample_initial_states,
                       spot_check)
from .fields import FieldDomainError, check_maxwell
from .forces import ImageParams, image_potential
from .io import output_directory, write_csv, write_json
from .units import UnitError, parse_quantity

STATE_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "Sx", "Sy", "Sz")
ION_COLUMNS = ("index", "spin", "status", "y0", "vy0", "vz0", "vy", "vz", "angle", "closest_approach",
               "adiabaticity")


class CliError(Exception):
    pass


# --- estimate ----------------------------------------------------------------------

# name -> (function, {arg: (dimension, keyword, default)})
_M = ("mass", "mass", CONSTANTS.ion_mass)
ESTIMATES = {
    "two-wire-gradient": (est.two_wire_gradient, {"I": ("current", "current", None), "d": ("length", "d", None)}),
    "two-wire-splitting": (est.two_wire_splitting, {
        "I": ("current", "current", None), "d": ("length", "d", None), "L": ("length", "length", None),
        "v": ("velocity", "speed", None), "m": _M, "dS": ("dimensionless", "delta_s", 1.0)}),
    "lorentz-broadening": (est.lorentz_broadening, {
        "L": ("length", "length", None), "grad": ("gradient", "gradient", None),
        "dy": ("length", "waist", None), "v": ("velocity", "speed", None), "m": _M}),
    "quadrupole-splitting": (est.quadrupole_splitting, {
        "grad": ("gradient", "gradient", None), "L": ("length", "length", None),
        "v": ("velocity", "speed", None), "m": _M}),
    "lorentz-bound": (est.lorentz_uncertainty_bound, {
        "p": ("momentum", "momentum", None), "dp": ("momentum", "momentum_spread", None),
        "grad": ("gradient", "gradient", None), "m": _M}),
    "beam-waist": (est.beam_waist_from_emittance, {
        "eta": ("emittance", "emittance", None), "E": ("energy", "energy", None),
        "dtheta": ("angle", "divergence", None)}),
    "hexapole-precession": (est.hexapole_precession, {
        "a3": ("field", "a3", None), "y0": ("length", "y0", None), "L": ("length", "length", None),
        "v": ("velocity", "speed", None)}),
}

# scalar helpers reported in the same format
_SCALARS = {
    "image-potential": ({"y": ("length", None)}, "J",
                        lambda a: image_potential(a["y"], ImageParams(), CONSTANTS)),
    "crash-bias": ({"v": ("velocity", None), "y": ("length", None)}, "T",
                   lambda a: crash_bias_minimum(a["v"], a["y"], CONSTANTS)),
    "larmor": ({"B": ("field", None)}, "rad/s", lambda a: larmor_frequency(a["B"])),
    "cyclotron": ({"B": ("field", None), "m": ("mass", CONSTANTS.ion_mass)}, "rad/s",
                  lambda a: cyclotron_frequency(a["B"], a["m"])),
}


def _parse_assignments(items: list[str], spec: dict) -> dict:
    got = {}
    for item in items:
        if "=" not in item:
            raise CliError(f"expected name=value, got {item!r}")
        k, v = item.split("=", 1)
        if k not in spec:
            raise CliError(f"unknown argument {k!r}; expected {', '.join(spec)}")
        dim = spec[k][0]
        try:
            got[k] = float(v) if dim == "dimensionless" else parse_quantity(v, dim)
        except (UnitError, ValueError) as exc:
            raise CliError(f"{k}: {exc}") from None
    return got


def run_estimate(name: str, items: list[str]) -> est.EstimateReport:
    if name in ESTIMATES:
        fn, spec = ESTIMATES[name]
        got = _parse_assignments(items, spec)
        kwargs = {}
        for k, (_, kw, default) in spec.items():
            if k in got:
                kwargs[kw] = got[k]
            elif default is not None:
                kwargs[kw] = default
            elif not (kw == "speed" and name == "lorentz-broadening"):
                raise CliError(f"{name} needs {k}=<value with unit>")
        return fn(**kwargs)
    if name in _SCALARS:
        spec, unit, fn = _SCALARS[name]
        got = _parse_assignments(items, spec)
        for k, (_, default) in spec.items():
            if k not in got:
                if default is None:
                    raise CliError(f"{name} needs {k}=<value with unit>")
                got[k] = default
        return est.EstimateReport(float(fn(got)), unit, name, got, name.replace("-", " "))
    raise CliError(f"unknown estimate {name!r}; choose from {', '.join([*ESTIMATES, *_SCALARS])}")


def cmd_estimate(args) -> int:
    report = run_estimate(args.name, args.values)
    print(report)
    if args.json:
        write_json(args.json, "estimate", report.to_dict())
    return 0


# --- simulate ----------------------------------------------------------------------


def _outdir(args, cfg: RunConfig) -> Path:
    return output_directory(args.out, cfg.output()["directory"])


def _angle_axis(cfg: RunConfig, spins) -> int:
    """x for spins along y (the symmetric multipole case), y otherwise."""
    return 0 if cfg.scenario != "grating" and any(s.endswith("y") for s in spins) else 1


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    engine = args.engine or cfg.engine
    out = _outdir(args, cfg)
    prefix = cfg.output()["prefix"]
    image, opts, const = cfg.image_params(), cfg.integrator_options(), cfg.constants
    launches = cfg.launch_states()
    axis = _angle_axis(cfg, [lab for lab, _, _ in launches])
    runs, files = [], []
    if engine == "full":
        model = cfg.field_model()
        for label, k, state in launches:
            tr = integrate(state, model, image, opts, const)
            rows = np.column_stack([tr.t, tr.states])
            path = out / f"{prefix}_ray{k}_{_slug(label)}.csv"
            files.append(str(write_csv(path, "trajectory", STATE_COLUMNS, rows)))
            f = tr.final
            runs.append({"spin": label, "ray": k, "status": tr.status.name, "final_angle": tr.final_angle(axis),
                         "final_position": f.r.tolist(), "final_velocity": f.v.tolist(), **tr.diagnostics})
    else:
        for label, k, state in launches:
            if label not in ("+x", "-x"):
                raise CliError("the averaged engine needs spins +x or -x")
            p = cfg.adiabatic_params(vz0=float(state.v[2]), spin_x0=0.5 if label == "+x" else -0.5)
            tr = integrate_adiabatic([state.r[1], state.v[1], state.v[2], state.r[2]], p, image, opts, const)
            rows = np.column_stack([tr.t, tr.states[:, [0, 1, 2, 3]], tr.terms(const)])
            path = out / f"{prefix}_ray{k}_{_slug(label)}.csv"
            files.append(str(write_csv(path, "reduced-trajectory", (*REDUCED_COLUMNS, *TERM_COLUMNS), rows)))
            y, vy, vz, z = tr.final
            runs.append({"spin": label, "ray": k, "status": tr.status.name, "final_angle": tr.final_angle(),
                         "final_position": [float(state.r[0]), y, z], "final_velocity": [float(state.v[0]), vy, vz],
                         **tr.diagnostics})
    pairs = _pair_separations(runs, axis)
    summary = {"title": cfg[""]["title"], "scenario": cfg.scenario, "engine": engine, "angle_axis": "xyz"[axis],
               "launch_height": cfg.geometry().position[1], "runs": runs, "pairs": pairs, "files": files}
    if pairs:
        summary["separation"] = pairs[0]["angular_separation"]
        summary["spatial_separation"] = pairs[0]["spatial_separation"]
    write_json(out / f"{prefix}_summary.json", "simulate-summary", summary)
    _print_simulate(summary)
    return 0


def _slug(label: str) -> str:
    return {"+": "plus_", "-": "minus_"}.get(label[0], "") + (label[1:] if label[0] in "+-" else "zero")


def _pair_separations(runs: list[dict], axis: int) -> list[dict]:
    out = []
    for k in sorted({r["ray"] for r in runs}):
        by = {r["spin"]: r for r in runs if r["ray"] == k}
        for a, b in (("+x", "-x"), ("+y", "-y")):
            if a in by and b in by:
                ra, rb = by[a], by[b]
                entry = {"ray": k, "spins": [a, b],
                         "angular_separation": abs(ra["final_angle"] - rb["final_angle"]),
                         "spatial_separation": abs(ra["final_position"][axis] - rb["final_position"][axis])}
                if "0" in by:
                    ref = by["0"]["final_angle"]
                    entry["deflections"] = [ra["final_angle"] - ref, rb["final_angle"] - ref]
                    entry["reference_bending"] = ref
                out.append(entry)
    return out


def _print_simulate(s: dict):
    print(f"{s['title'] or s['scenario']}  [{s['engine']} engine]")
    for r in s["runs"]:
        line = (f"  ray {r['ray']} spin {r['spin']:>2}: {r['status']}, angle {r['final_angle'] * 1e3:.4f} mrad, "
                f"closest {r['closest_approach'] * 1e6:.3f} um, steps {r['n_steps']}")
        if "energy_drift" in r:
            line += f", energy drift {r['energy_drift']:.2e}, spin drift {r['spin_norm_drift']:.1e}"
        if "adiabaticity" in r:
            line += f", adiabaticity {r['adiabaticity']:.1e}"
        print(line)
    for p in s["pairs"]:
        print(f"  ray {p['ray']} {p['spins'][0]}/{p['spins'][1]}: separation {p['angular_separation'] * 1e3:.3f} mrad, "
              f"{p['spatial_separation'] * 1e6:.2f} um")


# --- ensemble ----------------------------------------------------------------------


def _ensemble_states(cfg: RunConfig, n: int, seed: int, narrow: float | None):
    if not cfg.has("source"):
        raise CliError("the config has no [source] section")
    src = cfg.source_params()
    if narrow is not None:
        src = src.narrowed(narrow)
    geom = cfg.geometry()
    focus = cfg.focus_spec()
    if focus is not None and focus.enabled:
        p = cfg.adiabatic_params()
        return src, focus, focus_initial_states(src, focus, p, cfg.image_params(), n, seed, geom, cfg.constants)
    return src, focus, sample_initial_states(src, geom, n, seed)


def cmd_ensemble(args) -> int:
    cfg = load_config(args.config)
    engine = args.engine or cfg.engine
    n = args.n or (cfg["source"]["n"] if cfg.has("source") else 0)
    seed = cfg.seed if args.seed is None else args.seed
    out = _outdir(args, cfg)
    prefix = cfg.output()["prefix"]
    image, opts, const = cfg.image_params(), cfg.integrator_options(), cfg.constants
    src, focus, states = _ensemble_states(cfg, n, seed, args.narrow)
    model = cfg.field_model() if engine == "full" or args.spot_check else None
    adi = cfg.adiabatic_params() if engine == "adiabatic" else None
    res = run_ensemble(states, engine, model, image, opts, adi, args.workers, const, seed, focus)
    surface = res.surface_height
    rows = [(r.index, r.spin, r.status.name, r.initial.r[1] - surface, r.initial.v[1], r.initial.v[2],
             r.final.v[1], r.final.v[2], math.atan2(r.final.v[1], r.final.v[2]), r.closest_approach - surface,
             r.adiabaticity) for r in res.records]
    write_csv(out / f"{prefix}_ions.csv", "ensemble-ions", ION_COLUMNS, rows)
    hist_rows = []
    for spin, (h, ez, ey) in res.velocity_histograms(cfg.output()["histogram_bins"]).items():
        for i in range(h.shape[0]):
            for j in range(h.shape[1]):
                hist_rows.append((spin, ez[i], ez[i + 1], ey[j], ey[j + 1], int(h[i, j])))
    write_csv(out / f"{prefix}_histogram.csv", "velocity-histogram",
              ("spin", "vz_lo", "vz_hi", "vy_lo", "vy_hi", "count"), hist_rows)
    summary = {"title": cfg[""]["title"], "source": {"mean_speed": src.mean_speed, "axial_spread": src.axial_spread,
               "divergence": src.divergence, "emittance_1d": src.emittance_1d,
               "spin_preparation": src.spin_preparation},
               "focused": bool(focus is not None and focus.enabled), **res.summary()}
    if focus is not None and focus.enabled:
        summary["fraction_in_focus"] = res.fraction_in_focus()
    if args.spot_check:
        sc = spot_check(res, model, image, args.spot_check, seed, opts, args.workers, const)
        summary["spot_check"] = sc.to_dict()
    write_json(out / f"{prefix}_summary.json", "ensemble-summary", summary)
    print(f"{summary['title']}  [{engine} engine, n = {len(states)}, seed = {seed}]")
    print(f"  crashed {summary['crashed']}, statuses {summary['status_counts']}")
    for s, e in summary["per_spin"].items():
        print(f"  spin {s}: mean angle {_mrad(e['mean_angle'])}, spread {_mrad(e['angle_spread'])}, "
              f"closest approach {e['mean_closest_approach'] * 1e6:.3f} +- {e['closest_approach_spread'] * 1e6:.3f} um")
    if summary["separation"] is not None:
        print(f"  separation {summary['separation'] * 1e3:.4f} mrad, resolution ratio {summary['resolution_ratio']:.3f}")
    if "fraction_in_focus" in summary:
        print(f"  fraction in focus band {summary['fraction_in_focus']:.4f}")
    if "spot_check" in summary:
        sc = summary["spot_check"]
        print(f"  spot check ({sc['n']} ions): max |dv_y|/v_y {sc['max_relative_vy']:.2e}, "
              f"max angle difference {sc['max_angle_difference'] * 1e3:.4f} mrad")
    return 0


def _mrad(x):
    return "n/a" if x is None else f"{x * 1e3:.4f} mrad"


# --- field-check -------------------------------------------------------------------


def field_check_points(cfg: RunConfig, n: int, seed: int, grid: tuple[int, int, int] | None = None) -> np.ndarray:
    """Points inside the region where the scenario's field is smooth and used."""
    s = cfg.scenario_params
    if cfg.scenario == "grating":
        h0 = s["surface_height"]
        lo, hi = [-10e-6, h0 + 10e-6, 0.0], [10e-6, h0 + 60e-6, 2 * s["pitch"]]
    elif cfg.scenario == "multipole":
        half = 0.45 * s["window"]
        lo, hi = [-0.4 * s["y0"], -0.4 * s["y0"], -half], [0.4 * s["y0"], 0.4 * s["y0"], half]
    else:
        r = 0.5 * s["d"]
        half = 0.45 * s["window"]
        lo, hi = [-r, -r, -half], [r, r, half]
    lo, hi = np.array(lo), np.array(hi)
    if grid is not None:
        axes = [np.linspace(a, b, k) if k > 1 else np.array([(a + b) / 2]) for a, b, k in zip(lo, hi, grid)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return lo + (hi - lo) * np.random.default_rng(seed).random((n, 3))


def cmd_field_check(args) -> int:
    cfg = load_config(args.config)
    model = cfg.field_model()
    grid = tuple(int(v) for v in args.grid.split(",")) if args.grid else None
    if grid is not None and (len(grid) != 3 or min(grid) < 1):
        raise CliError("--grid takes three positive counts, e.g. 5,5,5")
    pts = field_check_points(cfg, args.points, args.seed, grid)
    scale = cfg.scenario_params.get("pitch", cfg.scenario_params.get("d", cfg.scenario_params.get("y0")))
    h = args.step if args.step else 1e-3 * scale
    rows, worst = [], 0.0
    for r in pts:
        res = check_maxwell(model, r, h)
        worst = max(worst, res.relative)
        rows.append((*r, res.div, *res.curl, res.jacobian_error, res.scale, res.relative))
    out = _outdir(args, cfg)
    prefix = cfg.output()["prefix"]
    write_csv(out / f"{prefix}_field_check.csv", "field-check",
              ("x", "y", "z", "div", "curl_x", "curl_y", "curl_z", "jacobian_error", "jacobian_norm", "relative"),
              rows)
    ok = worst < args.threshold
    print(f"{cfg.scenario} field check: {len(pts)} points, worst relative residual {worst:.3e} "
          f"(threshold {args.threshold:.1e}) -> {'ok' if ok else 'FAILED'}")
    return 0 if ok else 1


# --- sweep -------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if not cfg.has("sweep"):
        raise CliError("the config has no [sweep] section")
    sw = cfg["sweep"]
    vy0 = np.linspace(sw["vy0_min"], sw["vy0_max"], sw["points"])
    src = cfg.source_params() if cfg.has("source") else SourceParams(mean_speed=cfg.speed)
    p = cfg.adiabatic_params()
    h = cfg.launch_height()
    pts = closest_approach_curve(src, p, cfg.image_params(), vy0, h, cfg.integrator_options(), cfg.constants)
    surface = p.surface_height
    rows = [(q.vy0, q.spin_x0, q.closest_approach - surface, q.status.name, int(q.truncated)) for q in pts]
    out = _outdir(args, cfg)
    prefix = cfg.output()["prefix"]
    write_csv(out / f"{prefix}_sweep.csv", "closest-approach-curve",
              ("vy0", "spin_x0", "closest_approach", "status", "truncated"), rows)
    branches = {s: {q.vy0: q.closest_approach for q in pts if q.spin_x0 == s and not q.truncated} for s in (0.5, -0.5)}
    common = sorted(set(branches[0.5]) & set(branches[-0.5]))
    lower = [s for s in (0.5, -0.5)
             if all(branches[s][v] < branches[-s][v] for v in common)]
    summary = {"title": cfg[""]["title"], "launch_height": h, "points": len(vy0),
               "truncated": sum(q.truncated for q in pts),
               "crashed": sum(q.status == Status.Crashed for q in pts),
               "ordered": bool(common) and bool(lower), "attracted_spin_x0": lower[0] if lower else None}
    write_json(out / f"{prefix}_sweep_summary.json", "sweep-summary", summary)
    print(f"{summary['title']}: {len(vy0)} v_y0 values per branch, launch height {h * 1e6:.3f} um")
    print(f"  branches ordered: {summary['ordered']} (lower branch S_x0 = {summary['attracted_spin_x0']}), "
          f"truncated points {summary['truncated']}")
    return 0


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgbeam", description="Stern-Gerlach splitting of low-energy ion beams.")
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="evaluate a closed-form estimate",
                       description="Estimates: " + ", ".join([*ESTIMATES, *_SCALARS]))
    e.add_argument("name")
    e.add_argument("values", nargs="*", help="name=value-with-unit, e.g. I=100mA")
    e.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    e.set_defaults(func=cmd_estimate)

    def with_config(p):
        p.add_argument("--config", required=True,
                       help="config file, or a bundled name: " + ", ".join(bundled_configs()))
        p.add_argument("--out", help="output directory")
        return p

    s = with_config(sub.add_parser("simulate", help="fly the configured launch states"))
    s.add_argument("--engine", choices=("full", "adiabatic"))
    s.set_defaults(func=cmd_simulate)

    n = with_config(sub.add_parser("ensemble", help="Monte Carlo ensemble from the [source] section"))
    n.add_argument("--engine", choices=("full", "adiabatic"))
    n.add_argument("--n", type=int, help="number of ions (default from config)")
    n.add_argument("--seed", type=int)
    n.add_argument("--workers", type=int, help="pool width (default $SGBEAM_WORKERS or CPU count)")
    n.add_argument("--narrow", type=float, metavar="FACTOR", help="scale speed and angle spreads, e.g. 0.7")
    n.add_argument("--spot-check", type=int, default=0, metavar="N",
                   help="re-fly N random members with the full engine")
    n.set_defaults(func=cmd_ensemble)

    f = with_config(sub.add_parser("field-check", help="Maxwell residuals of the configured field"))
    f.add_argument("--grid", metavar="NX,NY,NZ", help="regular grid instead of random points")
    f.add_argument("--points", type=int, default=1000)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--step", type=float, help="finite-difference step in m")
    f.add_argument("--threshold", type=float, default=1e-6)
    f.set_defaults(func=cmd_field_check)

    w = with_config(sub.add_parser("sweep", help="closest approach against v_y0 for both spin branches"))
    w.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        status = args.func(args)
    except (CliError, ConfigError, UnitError) as exc:
        print(f"sgbeam {args.command}: {exc}", file=sys.stderr)
        return 2
    except (FieldDomainError, UnreachableTargetError, ValueError, RuntimeError) as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"sgbeam {args.command}: {mod}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"runtime {time.perf_counter() - t0:.2f} s")
    return status


if __name__ == "__main__":
    sys.exit(main())
