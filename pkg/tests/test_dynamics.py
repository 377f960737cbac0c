import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relnav.astro import Coe, coe_to_cartesian, orbital_period, specific_energy, CartesianState
from relnav.dynamics import (
    J2,
    KEPLER_ONLY,
    MU,
    R_EARTH,
    TIGHT,
    PropagatorConfig,
    TruthModelConfig,
    formation_jacobian,
    formation_rhs,
    gravity_gradient,
    gravity_gradient_rate,
    in_cylindrical_shadow,
    propagate,
    propagate_samples,
    propagate_truth,
    relative_accel,
    truth_accel,
    two_body_accel,
)
from relnav.scenarios import CHIEF_ORBIT, FORMATION_OFFSETS, formation_states


def stacked_formation():
    s = formation_states()
    return np.concatenate([s[0], (s[1:] - s[0]).ravel()])


positions = st.tuples(
    st.floats(-5e4, 5e4), st.floats(-5e4, 5e4), st.floats(-5e4, 5e4)
).map(np.array).filter(lambda r: np.linalg.norm(r) > 6000.0)


def test_two_body_accel_points_inward():
    r = np.array([7000.0, 0.0, 0.0])
    assert np.allclose(two_body_accel(r), [-MU / 7000.0**2, 0.0, 0.0])


def test_zero_position_rejected():
    with pytest.raises(ValueError):
        two_body_accel(np.zeros(3))
    with pytest.raises(ValueError):
        gravity_gradient(np.zeros(3))


@settings(max_examples=200, deadline=None)
@given(positions)
def test_gravity_gradient_trace_zero(r):
    G = gravity_gradient(r)
    assert abs(np.trace(G)) < 1e-12 * np.abs(G).max()
    assert np.allclose(G, G.T, rtol=0, atol=1e-16)


@settings(max_examples=100, deadline=None)
@given(positions)
def test_gravity_gradient_finite_difference(r):
    h = 1e-3
    fd = np.column_stack([(two_body_accel(r + h * e) - two_body_accel(r - h * e)) / (2 * h) for e in np.eye(3)])
    assert np.allclose(gravity_gradient(r), fd, rtol=1e-6, atol=1e-7 * np.abs(fd).max())


def test_gravity_gradient_rate_matches_derivative():
    s = coe_to_cartesian(Coe(9000.0, 0.3, 0.5, 0.2, 0.4, 1.0))
    h = 1e-2
    fd = (gravity_gradient(s.r + h * s.v) - gravity_gradient(s.r - h * s.v)) / (2 * h)
    assert np.allclose(gravity_gradient_rate(s.r, s.v), fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_relative_accel_is_difference():
    rc = np.array([43399.0, 0.0, 0.0])
    dr = np.array([1.0, 2.0, -3.0])
    assert np.allclose(relative_accel(rc, dr), two_body_accel(rc + dr) - two_body_accel(rc))


def test_formation_jacobian_finite_difference():
    x = stacked_formation()
    F = formation_jacobian(x, MU)
    fd = np.empty_like(F)
    for k in range(x.size):
        h = 1e-3 if k % 6 < 3 else 1e-6
        dx = np.zeros_like(x)
        dx[k] = h
        fd[:, k] = (formation_rhs(x + dx, MU) - formation_rhs(x - dx, MU)) / (2 * h)
    assert np.allclose(F, fd, rtol=1e-7, atol=1e-7 * np.abs(F).max())


def test_formation_rhs_chief_block():
    x = stacked_formation()
    f = formation_rhs(x, MU)
    assert np.allclose(f[:3], x[3:6])
    assert np.allclose(f[3:6], two_body_accel(x[:3]))
    assert np.allclose(f[9:12], relative_accel(x[:3], x[6:9]))


def test_stm_matches_finite_difference():
    x0 = stacked_formation()[:12]
    dt = 3600.0
    _, phi = propagate(x0, dt, TIGHT, with_stm=True)
    fd = np.empty_like(phi)
    for k in range(x0.size):
        eps = 1e-4 if k % 6 < 3 else 1e-4 * 1e-3  # km and km/s scaled perturbation
        dx = np.zeros_like(x0)
        dx[k] = eps
        xp, _ = propagate(x0 + dx, dt, TIGHT)
        xm, _ = propagate(x0 - dx, dt, TIGHT)
        fd[:, k] = (xp - xm) / (2 * eps)
    err = np.linalg.norm(phi - fd) / np.linalg.norm(phi)
    assert err < 1e-4


def test_stm_is_symplectic():
    x0 = stacked_formation()[:12]
    _, phi = propagate(x0, orbital_period(CHIEF_ORBIT.a), TIGHT, with_stm=True)
    assert np.linalg.det(phi) == pytest.approx(1.0, abs=1e-8)


def test_energy_conserved_at_tight_tolerance():
    x0 = stacked_formation()
    T = orbital_period(CHIEF_ORBIT.a)
    states, _ = propagate_samples(x0, np.linspace(0.0, 2 * T, 9), TIGHT)
    def energy(s, j=None):
        r, v = s[:3], s[3:6]
        if j is not None:
            r, v = r + s[6 + 6 * j : 9 + 6 * j], v + s[9 + 6 * j : 12 + 6 * j]
        return specific_energy(CartesianState(r, v))
    for j in (None, 0, 4):
        e = np.array([energy(s, j) for s in states])
        assert np.max(np.abs(e - e[0])) < 1e-9 * abs(e[0])


def test_loose_tolerance_drifts():
    # the default tolerances are deliberately coarse; document their drift
    x0 = stacked_formation()[:6]
    T = orbital_period(CHIEF_ORBIT.a)
    states, _ = propagate_samples(x0, np.array([0.0, T]))
    assert np.linalg.norm(states[-1, :3] - x0[:3]) > 1.0


def test_period_closure_two_body():
    c = Coe(7000.0, 0.1, 0.3, 0.2, 0.1, 0.5)
    s = coe_to_cartesian(c).as_array()
    x, _ = propagate(s, orbital_period(c.a), TIGHT)
    assert np.allclose(x, s, atol=1e-6)


def test_euler_step():
    x0 = stacked_formation()
    cfg = PropagatorConfig(method="euler", max_step=1.0)
    x1, phi = propagate(x0, 1.0, cfg, with_stm=True)
    assert np.allclose(phi, np.eye(x0.size) + formation_jacobian(x0, MU))
    ref, _ = propagate(x0, 1.0, TIGHT)
    # relative positions carry only the differential acceleration
    for j in range(5):
        o = 6 + 6 * j
        assert np.linalg.norm(x1[o : o + 3] - ref[o : o + 3]) < 1e-6
    # the chief position error is the dropped second-order term
    a = np.linalg.norm(two_body_accel(x0[:3]))
    assert np.linalg.norm(x1[:3] - ref[:3]) == pytest.approx(0.5 * a, rel=1e-2)


def test_fixed_rk4_agrees_with_adaptive():
    x0 = stacked_formation()
    times = np.array([0.0, 600.0, 1200.0])
    a, _ = propagate_samples(x0, times, TIGHT)
    b, _ = propagate_samples(x0, times, PropagatorConfig(method="fixed_rk4", max_step=10.0))
    assert np.allclose(a, b, atol=1e-7)


def test_propagate_rejects_bad_input():
    with pytest.raises(ValueError):
        propagate(stacked_formation(), 0.0)
    with pytest.raises(ValueError):
        propagate_samples(np.zeros(7), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        PropagatorConfig(method="leapfrog")


# --- truth model ---------------------------------------------------------------


def test_truth_kepler_only_matches_stacked_model():
    s = formation_states()
    times = np.array([0.0, 1800.0, 3600.0])
    truth = propagate_truth(s, times, KEPLER_ONLY)
    x0 = np.concatenate([s[0], (s[1:] - s[0]).ravel()])
    stacked, _ = propagate_samples(x0, times, TIGHT)
    assert np.allclose(truth[:, 0, :], stacked[:, :6], atol=1e-6)
    assert np.allclose(truth[:, 3, :3] - truth[:, 0, :3], stacked[:, 18:21], atol=1e-6)


def test_j2_acceleration_at_pole_and_equator():
    cfg = TruthModelConfig(enable_lunisolar=False, enable_srp=False)
    r_eq = np.array([[7000.0, 0.0, 0.0]])
    extra = truth_accel(r_eq, 0.0, cfg) - truth_accel(r_eq, 0.0, KEPLER_ONLY)
    expected = -1.5 * J2 * MU * R_EARTH**2 / 7000.0**4
    assert extra[0, 0] == pytest.approx(expected, rel=1e-12)
    r_pole = np.array([[0.0, 0.0, 7000.0]])
    extra = truth_accel(r_pole, 0.0, cfg) - truth_accel(r_pole, 0.0, KEPLER_ONLY)
    assert extra[0, 2] == pytest.approx(-2 * expected, rel=1e-12)


def test_perturbations_are_small_at_geo_like_radius():
    r = formation_states()[:, :3]
    pert = truth_accel(r, 0.0) - truth_accel(r, 0.0, KEPLER_ONLY)
    kepler = np.linalg.norm(truth_accel(r, 0.0, KEPLER_ONLY), axis=1)
    ratio = np.linalg.norm(pert, axis=1) / kepler
    assert np.all(ratio < 1e-3)
    assert np.all(ratio > 1e-7)


def test_cylindrical_shadow():
    sun = np.array([1.0, 0.0, 0.0])
    r = np.array([[-7000.0, 0.0, 0.0], [7000.0, 0.0, 0.0], [-7000.0, 7000.0, 0.0]])
    assert in_cylindrical_shadow(r, sun).tolist() == [True, False, False]


def test_srp_switches_off_in_shadow():
    cfg = TruthModelConfig(enable_j2=False, enable_lunisolar=False)
    r_sun = cfg.sun_ephemeris.position(0.0)
    behind = -7000.0 * r_sun[None, :] / np.linalg.norm(r_sun)
    assert np.allclose(truth_accel(behind, 0.0, cfg), truth_accel(behind, 0.0, KEPLER_ONLY), rtol=0, atol=0)
    front = -behind
    diff = truth_accel(front, 0.0, cfg) - truth_accel(front, 0.0, KEPLER_ONLY)
    assert np.linalg.norm(diff) == pytest.approx(4.56e-6 * 0.01 * 1e-3, rel=1e-3)


def test_ephemeris_radii():
    cfg = TruthModelConfig()
    for t in (0.0, 1e5, 3e6):
        assert np.linalg.norm(cfg.sun_ephemeris.position(t)) == pytest.approx(149597870.7)
        assert np.linalg.norm(cfg.moon_ephemeris.position(t)) == pytest.approx(384400.0)


def test_offsets_table_units():
    s = formation_states()
    assert s.shape == (6, 6)
    assert np.allclose(s[:, 3:] - coe_to_cartesian(CHIEF_ORBIT).v, FORMATION_OFFSETS[:, 3:] * 1e-3)
