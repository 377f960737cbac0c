import csv
import json

import pytest

from relnav.cli import main, parse_design, parse_noise, parse_scenario, ConfigError
from relnav.measurement import RF_ONLY

SHORT = {"duration_orbits": 0.05, "window_start_s": 1000.0, "seed": 5}


def _run(tmp_path, command, cfg, name="out"):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(cfg_path), "--out", str(out)])
    return code, out


def _header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_propagate(tmp_path):
    code, out = _run(tmp_path, "propagate", {"duration_orbits": 0.01, "output_step_s": 300.0})
    assert code == 0
    assert _header(out / "trajectory.csv")[:3] == ["epoch_s", "sc", "x_km"]
    m = _manifest(out)
    assert m["command"] == "propagate" and m["exit_code"] == 0
    assert set(m["versions"]) >= {"python", "numpy", "scipy"}
    assert m["wall_time_s"] >= 0


def test_measure_reproducible(tmp_path):
    cfg = {**SHORT, "noise": "rf_only"}
    _, a = _run(tmp_path, "measure", cfg, "a")
    _, b = _run(tmp_path, "measure", cfg, "b")
    assert (a / "measurements.csv").read_text() == (b / "measurements.csv").read_text()
    assert _header(a / "measurements.csv") == ["epoch_s", "sc_a", "sc_b", "range_km", "ra_rad", "dec_rad"]


def test_filter(tmp_path):
    code, out = _run(tmp_path, "filter", SHORT)
    assert code == 0
    assert _header(out / "errors.csv")[:3] == ["epoch_s", "abs_err_km", "rel_err_km_sc2"]
    assert (out / "estimates.csv").exists()
    assert _manifest(out)["summary"]["diverged"] is False


def test_montecarlo(tmp_path):
    code, out = _run(tmp_path, "montecarlo", {**SHORT, "trials": 2, "variant": "pva"})
    assert code == 0
    assert _header(out / "trials.csv") == ["trial", "abs_pos_rms_km", "mean_rel_pos_rms_m", "new_sc_rel_rms_m", "diverged"]
    assert _header(out / "summary.csv") == ["abs_pos_rms_km", "mean_rel_pos_rms_m", "new_sc_rel_rms_m"]
    assert _manifest(out)["seed"] == 5


def test_sensor_reduced(tmp_path):
    code, out = _run(tmp_path, "sensor-reduced", {**SHORT, "trials": 1})
    assert code == 0
    for label in ("with_new_sc", "range_only_baseline"):
        assert _header(out / f"{label}_envelope.csv") == ["orbit", "max_mean_rel_err_m", "max_abs_err_km"]
        assert (out / f"{label}_trials.csv").exists()


def test_obs_eval(tmp_path):
    code, out = _run(tmp_path, "obs-eval", {"design": "rf_only_lui", "n_samples": 50})
    assert code == 0
    assert _header(out / "singular_values.csv") == ["index", "singular_value", "dominant_state"]
    assert _manifest(out)["summary"]["objective"] < 0


def test_obs_eval_infeasible_flagged(tmp_path):
    design = {"parametrization": "coe_fixed_period", "values": [0.9, 0.0, 0.0, 0.0, 0.0]}
    code, out = _run(tmp_path, "obs-eval", {"design": design, "n_samples": 20})
    assert code == 2
    assert "eccentricity" in _manifest(out)["summary"]["violated"]


def test_optimize(tmp_path):
    code, out = _run(tmp_path, "optimize", {"n_samples": 20, "budget": 15, "seed": 1})
    assert code == 0
    assert _header(out / "best.csv") == ["e", "i", "raan", "argp", "nu", "objective"]
    with open(out / "trace.csv") as fh:
        assert sum(1 for _ in fh) == 16
    assert _manifest(out)["summary"]["evaluations"] == 15


def test_optimize_infeasible_flagged(tmp_path):
    cfg = {"sensor": "rf_vision", "n_samples": 20, "budget": 3, "constraints": {"d_max": 1e-6}}
    code, out = _run(tmp_path, "optimize", cfg)
    assert code == 2
    assert _manifest(out)["exit_code"] == 2


def test_bad_config_exit_one(tmp_path):
    code, out = _run(tmp_path, "montecarlo", {"bogus_key": 1})
    assert code == 1
    assert _manifest(out)["exit_code"] == 1


def test_missing_config_exit_one(tmp_path):
    assert main(["filter", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_parse_helpers():
    assert parse_noise("rf_only") == RF_ONLY
    n = parse_noise({"sigma_range_km": 1e-3, "sigma_ra_arcsec": 35.0, "sigma_dec_arcsec": 35.0})
    assert n.sigma_range == 1e-3
    with pytest.raises(ConfigError):
        parse_noise("loud")
    x = parse_design({"parametrization": "coe_fixed_period", "values": [0.1, 90.0, 0.0, 0.0, 180.0]}, "coe_fixed_period")
    assert x.values[1] == pytest.approx(1.5707963267948966)
    sc = parse_scenario({"new_sc": "rf_vision_lui", "sensor_reduced": True})
    assert sc.schedule == "parallel7" and sc.n_spacecraft == 7
    sc = parse_scenario({"chief": [43399.0, 0.0, 0.0, 0.0, 0.0, 0.0], "variant": "pva"})
    assert sc.variant == "pva"
