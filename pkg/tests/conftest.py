import numpy as np
import pytest

from relnav.harness import monte_carlo
from relnav.scenarios import ScenarioConfig, range_only_baseline, sensor_reduced_scenario, with_new_sc

MC_TRIALS = 40
SR_TRIALS = 2
SR_ORBITS = 10


@pytest.fixture(scope="session")
def baseline_runs():
    """40-trial Monte Carlo of both filters on the reference scenario (2 orbits)."""
    out = {}
    for variant in ("pva", "absrel"):
        out[variant] = monte_carlo(ScenarioConfig(variant=variant), trials=MC_TRIALS, keep_trials=True)
    return out


def orbit_envelope(trials, period, n_orbits, deputies=slice(0, 5)):
    """Per-orbit maximum of the trial-averaged mean relative error (m) and chief error (km)."""
    rel = np.mean([tr.rel_err[:, deputies].mean(axis=1) for tr in trials], axis=0) * 1e3
    ab = np.mean([tr.abs_err for tr in trials], axis=0)
    edges = [int(round(k * period)) for k in range(n_orbits + 1)]
    rel_env = np.array([rel[a:b].max() for a, b in zip(edges[:-1], edges[1:])])
    abs_env = np.array([ab[a:b].max() for a, b in zip(edges[:-1], edges[1:])])
    return rel_env, abs_env


@pytest.fixture(scope="session")
def sensor_reduced_runs():
    """10-orbit runs with 10 km initial chief error: new spacecraft vs range-only baseline."""
    base = ScenarioConfig(variant="absrel", init_abs_pos=10.0, duration_orbits=SR_ORBITS)
    cfgs = {
        "with_new_sc": sensor_reduced_scenario(with_new_sc(base, "rf_vision_lui")),
        "baseline": range_only_baseline(base),
    }
    return {k: (c, *monte_carlo(c, trials=SR_TRIALS, keep_trials=True)) for k, c in cfgs.items()}


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
        lines[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
