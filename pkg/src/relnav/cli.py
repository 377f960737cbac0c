"""Command-line entry point.

Every subcommand reads a JSON config (angles in degrees) and writes CSV
outputs plus ``manifest.json`` into the output directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .astro import Coe
from .dynamics import PropagatorConfig, TruthModelConfig, propagate_truth
from .harness import initial_filter_state, monte_carlo, position_errors, simulate_truth, splitmix64
from .measurement import ARCSEC, RF_ONLY, RF_VISION, NOISELESS, NoiseSpec, synthesize_measurements
from .filters import run_filter
from .optimize import (
    ConstraintSet,
    DesignVector,
    InfeasibleError,
    ObjectiveSpec,
    eval_objective,
    feasible,
    optimize,
)
from .scenarios import (
    ALPHA_NEW,
    CHIEF_ORBIT,
    NEW_SC_CONFIGS,
    ScenarioConfig,
    new_sc_coe,
    range_only_baseline,
    sensor_reduced_scenario,
)

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2
NOISE_PRESETS = {"rf_vision": RF_VISION, "rf_only": RF_ONLY, "noiseless": NOISELESS}


class ConfigError(ValueError):
    pass


# --- config parsing -----------------------------------------------------------


def coe_from_degrees(vals) -> Coe:
    if len(vals) != 6:
        raise ConfigError("orbit needs [a_km, e, i_deg, raan_deg, argp_deg, nu_deg]")
    return Coe.from_degrees(*[float(v) for v in vals])


def parse_noise(spec) -> NoiseSpec:
    if spec is None:
        return RF_VISION
    if isinstance(spec, str):
        try:
            return NOISE_PRESETS[spec]
        except KeyError:
            raise ConfigError(f"unknown noise preset {spec!r}") from None
    return NoiseSpec(
        float(spec["sigma_range_km"]),
        float(spec.get("sigma_ra_arcsec", 0.0)) * ARCSEC,
        float(spec.get("sigma_dec_arcsec", 0.0)) * ARCSEC,
    )


def parse_truth(spec) -> TruthModelConfig:
    spec = spec or {}
    return TruthModelConfig(
        enable_j2=bool(spec.get("j2", True)),
        enable_lunisolar=bool(spec.get("lunisolar", True)),
        enable_srp=bool(spec.get("srp", True)),
        srp_area_to_mass=float(spec.get("srp_area_to_mass", 0.01)),
    )


_SCENARIO_KEYS = {
    "chief", "offsets", "new_sc", "new_sensor", "alpha_new", "schedule", "noise", "truth", "variant",
    "init_abs_pos_km", "init_abs_vel_kms", "init_rel_pos_km", "init_rel_vel_kms", "gate", "duration_orbits",
    "seed", "trials", "workers", "trial", "sensor_reduced", "output_step_s", "measurement_noise", "window_start_s",
}


def parse_scenario(cfg: dict) -> ScenarioConfig:
    unknown = set(cfg) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw: dict = {}
    if "chief" in cfg:
        kw["chief"] = coe_from_degrees(cfg["chief"])
    if "offsets" in cfg:
        kw["offsets"] = np.array(cfg["offsets"], dtype=float)
    new = cfg.get("new_sc")
    if isinstance(new, str):
        if new not in NEW_SC_CONFIGS:
            raise ConfigError(f"unknown new-spacecraft configuration {new!r}")
        kw["new_sc"] = new_sc_coe(new)
        kw["new_sensor"] = "rf_vision" if new.startswith("rf_vision") else "rf_only"
        kw["alpha_new"] = ALPHA_NEW.get(new, 1e4)
        kw["schedule"] = "parallel7"
    elif new is not None:
        kw["new_sc"] = coe_from_degrees(new)
    for key, name in (("new_sensor", "new_sensor"), ("alpha_new", "alpha_new"), ("schedule", "schedule"),
                      ("variant", "variant"), ("gate", "gate"), ("duration_orbits", "duration_orbits"),
                      ("seed", "seed"), ("init_abs_pos_km", "init_abs_pos"), ("init_abs_vel_kms", "init_abs_vel"),
                      ("init_rel_pos_km", "init_rel_pos"), ("init_rel_vel_kms", "init_rel_vel"),
                      ("window_start_s", "window_start")):
        if key in cfg:
            kw[name] = cfg[key]
    if "noise" in cfg:
        kw["noise"] = parse_noise(cfg["noise"])
    if "measurement_noise" in cfg:
        kw["measurement_noise"] = parse_noise(cfg["measurement_noise"])
    if "truth" in cfg:
        kw["truth"] = parse_truth(cfg["truth"])
    out = ScenarioConfig(**kw)
    if cfg.get("sensor_reduced"):
        out = sensor_reduced_scenario(out)
    return out


_ANGLE_SLOTS = {"coe_fixed_period": (1, 2, 3, 4), "apsis": (2, 3, 4, 5)}


def parse_design(spec, default_param: str) -> DesignVector:
    """A design from a Table name or ``{"parametrization", "values"}`` with angles in degrees."""
    if isinstance(spec, str):
        if spec not in NEW_SC_CONFIGS:
            raise ConfigError(f"unknown configuration {spec!r}")
        return DesignVector.from_coe(new_sc_coe(spec), default_param)
    param = spec.get("parametrization", default_param)
    if param not in _ANGLE_SLOTS:
        raise ConfigError(f"unknown parametrization {param!r}")
    vals = [float(v) for v in spec["values"]]
    for k in _ANGLE_SLOTS[param]:
        if k < len(vals):
            vals[k] = math.radians(vals[k])
    return DesignVector(param, tuple(vals))


def design_to_degrees(x: DesignVector) -> list[float]:
    vals = list(x.values)
    for k in _ANGLE_SLOTS[x.parametrization]:
        vals[k] = math.degrees(vals[k])
    return vals


def parse_objective(cfg: dict) -> ObjectiveSpec:
    prop = cfg.get("propagator")
    return ObjectiveSpec(
        kind=cfg.get("objective", "sfim_lui"),
        sensor=cfg.get("sensor", "rf_only"),
        sample_period=float(cfg.get("sample_period_s", 90.0)),
        n_samples=int(cfg.get("n_samples", 1000)),
        noise=parse_noise(cfg["noise"]) if "noise" in cfg else None,
        propagator=PropagatorConfig(**prop) if prop else None,
    )


def parse_constraints(cfg: dict) -> ConstraintSet:
    c = cfg.get("constraints", {})
    return ConstraintSet(**{k: float(v) for k, v in c.items()})


# --- subcommands --------------------------------------------------------------


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_propagate(cfg: dict, out: Path) -> tuple[int, dict]:
    sc = parse_scenario(cfg)
    step = float(cfg.get("output_step_s", 60.0))
    n = int(math.floor(sc.duration / step))
    times = np.arange(n + 1) * step
    states = propagate_truth(sc.initial_states(), times, sc.truth)
    rows = []
    for k, t in enumerate(times):
        for s in range(states.shape[1]):
            rows.append([repr(float(t)), s + 1, *[repr(float(v)) for v in states[k, s]]])
    _write_rows(out / "trajectory.csv", ["epoch_s", "sc", "x_km", "y_km", "z_km", "vx_kms", "vy_kms", "vz_kms"], rows)
    return EXIT_OK, {"epochs": int(times.size), "spacecraft": int(states.shape[1])}


def cmd_measure(cfg: dict, out: Path) -> tuple[int, dict]:
    sc = parse_scenario(cfg)
    truth = simulate_truth(sc)
    noise, pair_noise = sc.synthesis_noise()
    meas = synthesize_measurements(truth, sc.make_schedule(), sc.mode_map(), noise, sc.seed, pair_noise=pair_noise)
    meas.to_csv(out / "measurements.csv")
    return EXIT_OK, {"measurements": len(meas)}


def cmd_filter(cfg: dict, out: Path) -> tuple[int, dict]:
    sc = parse_scenario(cfg)
    trial = int(cfg.get("trial", 0))
    rng = np.random.default_rng(splitmix64(sc.seed, trial))
    truth = simulate_truth(sc)
    state = initial_filter_state(sc, truth, rng)
    noise, pair_noise = sc.synthesis_noise()
    meas = synthesize_measurements(truth, sc.make_schedule(), sc.mode_map(), noise, rng, pair_noise=pair_noise)
    res = run_filter(state, meas, sc.duration, sc.dt, sc.noise, pair_noise=sc.pair_noise(), gate=sc.gate, store_sigma=True)
    res.to_csv(out / "estimates.csv")
    abs_err, rel_err = position_errors(res, truth)
    header = ["epoch_s"] + (["abs_err_km"] if abs_err is not None else []) + [f"rel_err_km_sc{j + 2}" for j in range(rel_err.shape[1])]
    rows = []
    for k in range(rel_err.shape[0]):
        row = [repr(float(res.times[k]))]
        if abs_err is not None:
            row.append(repr(float(abs_err[k])))
        rows.append(row + [repr(float(v)) for v in rel_err[k]])
    _write_rows(out / "errors.csv", header, rows)
    summary = {"diverged": res.diverged, "n_gated": res.n_gated, "measurements": len(meas)}
    return (EXIT_FLAGGED if res.diverged else EXIT_OK), summary


def _report_dict(rep) -> dict:
    return {
        "abs_pos_rms_km": rep.abs_pos_rms,
        "mean_rel_pos_rms_m": rep.mean_rel_pos_rms,
        "new_sc_rel_rms_m": rep.new_sc_rel_rms,
        "window_start_s": rep.window_start,
        "diverged_trials": list(rep.diverged),
    }


def _write_report(rep, path: Path) -> None:
    rows = []
    for k in range(rep.per_trial_rel.size):
        new = rep.per_trial_new[k] if rep.per_trial_new is not None else math.nan
        rows.append([k, repr(float(rep.per_trial_abs[k])), repr(float(rep.per_trial_rel[k])), repr(float(new)),
                     int(k in rep.diverged)])
    _write_rows(path, ["trial", "abs_pos_rms_km", "mean_rel_pos_rms_m", "new_sc_rel_rms_m", "diverged"], rows)


def cmd_montecarlo(cfg: dict, out: Path) -> tuple[int, dict]:
    sc = parse_scenario(cfg)
    rep = monte_carlo(sc, int(cfg.get("trials", 40)), int(cfg.get("workers", 1)))
    _write_report(rep, out / "trials.csv")
    summary = _report_dict(rep)
    _write_rows(out / "summary.csv", list(summary)[:3], [[summary[k] for k in list(summary)[:3]]])
    return (EXIT_FLAGGED if rep.diverged else EXIT_OK), summary


def _orbit_envelope(results, period: float, times: np.ndarray) -> list[list]:
    """Per-orbit maximum of the trial-averaged errors."""
    rel = np.mean([r.rel_err.mean(axis=1) for r in results], axis=0) * 1e3
    absr = np.mean([r.abs_err for r in results], axis=0) if results[0].abs_err is not None else None
    orbit = np.floor(times[: rel.size] / period).astype(int)
    rows = []
    for k in np.unique(orbit):
        m = orbit == k
        rows.append([int(k), repr(float(rel[m].max())), repr(float(absr[m].max())) if absr is not None else ""])
    return rows


def cmd_sensor_reduced(cfg: dict, out: Path) -> tuple[int, dict]:
    cfg = dict(cfg)
    cfg.setdefault("new_sc", "rf_vision_lui")
    cfg.setdefault("duration_orbits", 10)
    cfg.setdefault("init_abs_pos_km", 10.0)
    cfg.pop("sensor_reduced", None)
    base = parse_scenario(cfg)
    trials = int(cfg.get("trials", 1))
    workers = int(cfg.get("workers", 1))
    summary = {}
    flagged = False
    for label, sc in (("with_new_sc", sensor_reduced_scenario(base)), ("range_only_baseline", range_only_baseline(base))):
        rep, results = monte_carlo(sc, trials, workers, keep_trials=True)
        _write_report(rep, out / f"{label}_trials.csv")
        env = _orbit_envelope(results, sc.period, simulate_truth(sc).times)
        _write_rows(out / f"{label}_envelope.csv", ["orbit", "max_mean_rel_err_m", "max_abs_err_km"], env)
        summary[label] = _report_dict(rep)
        flagged |= bool(rep.diverged)
    return (EXIT_FLAGGED if flagged else EXIT_OK), summary


def cmd_obs_eval(cfg: dict, out: Path) -> tuple[int, dict]:
    spec = parse_objective(cfg)
    x = parse_design(cfg.get("design", "rf_only_lui"), spec.parametrization)
    ok, violated = feasible(x, parse_constraints(cfg), spec.sensor, CHIEF_ORBIT)
    rep = eval_objective(x, spec)
    if rep.metrics is not None:
        m = rep.metrics
        dom = m.dominant_states()
        _write_rows(out / "singular_values.csv", ["index", "singular_value", "dominant_state"],
                    [[k, repr(float(s)), int(dom[k])] for k, s in enumerate(m.singular_values)])
    _write_rows(out / "objective.csv", ["objective", "eclipsed_fraction", "singular", "feasible"],
                [[repr(rep.objective), repr(rep.eclipsed_fraction), int(rep.singular), int(ok)]])
    summary = {"objective": rep.objective, "eclipsed_fraction": rep.eclipsed_fraction, "feasible": ok,
               "violated": violated, "singular": rep.singular}
    return (EXIT_OK if ok and not rep.failed else EXIT_FLAGGED), summary


def cmd_optimize(cfg: dict, out: Path) -> tuple[int, dict]:
    spec = parse_objective(cfg)
    cs = parse_constraints(cfg)
    x0 = parse_design(cfg["x0"], spec.parametrization) if "x0" in cfg else None
    try:
        res = optimize(spec, cs, cfg.get("solver", "multistart_local"), int(cfg.get("budget", 2000)),
                       int(cfg.get("seed", 0)), x0=x0, workers=int(cfg.get("workers", 1)))
    except InfeasibleError as exc:
        return EXIT_FLAGGED, {"error": str(exc)}
    names = ["e", "i", "raan", "argp", "nu"] if spec.parametrization == "coe_fixed_period" else \
        ["r_apo", "r_peri", "i", "raan", "argp", "nu"]
    res.write_trace(out / "trace.csv", names)
    best = design_to_degrees(res.design)
    _write_rows(out / "best.csv", [*names, "objective"], [[*map(repr, best), repr(res.objective)]])
    return EXIT_OK, {"objective": res.objective, "best_deg": best, "evaluations": len(res.trace)}


COMMANDS = {
    "propagate": cmd_propagate,
    "measure": cmd_measure,
    "filter": cmd_filter,
    "montecarlo": cmd_montecarlo,
    "obs-eval": cmd_obs_eval,
    "optimize": cmd_optimize,
    "sensor-reduced": cmd_sensor_reduced,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relnav", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path, help="JSON config, angles in degrees")
        s.add_argument("--out", required=True, type=Path, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    cfg: dict = {}
    try:
        cfg = json.loads(args.config.read_text())
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        args.out.mkdir(parents=True, exist_ok=True)
        code, summary = COMMANDS[args.command](cfg, args.out)
    except Exception as exc:  # reported through the exit code
        print(f"relnav {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        code, summary = EXIT_ERROR, {"error": f"{type(exc).__name__}: {exc}"}
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": cfg.get("seed", 0),
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - t0,
        "exit_code": code,
        "summary": summary,
    }
    if args.out.is_dir():
        (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float))
    if code != EXIT_ERROR:
        print(json.dumps(summary, default=float))
    return code


if __name__ == "__main__":
    sys.exit(main())
