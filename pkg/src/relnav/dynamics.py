"""Formation equations of motion, gravity-gradient tensors and propagation.

The formation state is stacked as ``[r1, v1, dr_2, dv_2, ..., dr_N, dv_N]``:
the chief's absolute ECI position and velocity followed by each deputy's
position and velocity relative to the chief along inertial axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp

from .astro import EARTH

MU = EARTH.mu_earth
R_EARTH = EARTH.r_earth
J2 = 1.08262668e-3
MU_SUN = 1.32712440018e11
MU_MOON = 4902.800066
DAY = 86400.0


class PropagationError(RuntimeError):
    """Integration failed (step-size underflow or non-finite state)."""


# --- point-mass field ---------------------------------------------------------


@njit(cache=True)
def _accel(r, mu):
    rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    k = -mu / (rn * rn * rn)
    return np.array([k * r[0], k * r[1], k * r[2]])


@njit(cache=True)
def _gradient(r, mu):
    rn = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    k = mu / (rn * rn * rn)
    g = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            g[a, b] = k * 3.0 * r[a] * r[b] / (rn * rn)
        g[a, a] -= k
    return g


def _checked(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).reshape(3)
    if not np.linalg.norm(r) > 0:
        raise ValueError("position vector must be nonzero")
    return r


def two_body_accel(r, mu: float = MU) -> np.ndarray:
    return _accel(_checked(r), mu)


def relative_accel(r_chief, dr, mu: float = MU) -> np.ndarray:
    """Exact differential gravity on a deputy at ``r_chief + dr``."""
    r_chief = _checked(r_chief)
    r_dep = np.asarray(dr, dtype=float).reshape(3) + r_chief
    if not np.linalg.norm(r_dep) > 0:
        raise ValueError("deputy lies at the Earth's center")
    return _accel(r_dep, mu) - _accel(r_chief, mu)


def gravity_gradient(r, mu: float = MU) -> np.ndarray:
    """Jacobian of the point-mass acceleration with respect to position (1/s^2)."""
    return _gradient(_checked(r), mu)


def gravity_gradient_rate(r, v, mu: float = MU) -> np.ndarray:
    """Time derivative of :func:`gravity_gradient` along a trajectory (1/s^3)."""
    r = _checked(r)
    v = np.asarray(v, dtype=float).reshape(3)
    rn = float(np.linalg.norm(r))
    rh = r / rn
    rv = float(rh @ v)
    outer = np.outer(v, rh) + np.outer(rh, v)
    return 3.0 * mu / rn**4 * (outer - rv * (5.0 * np.outer(rh, rh) - np.eye(3)))


@dataclass(frozen=True)
class GravityGradient:
    g: np.ndarray
    gdot: np.ndarray

    @classmethod
    def at(cls, r, v, mu: float = MU) -> "GravityGradient":
        return cls(gravity_gradient(r, mu), gravity_gradient_rate(r, v, mu))


# --- stacked formation model --------------------------------------------------


@njit(cache=True)
def formation_rhs(x, mu=MU):
    """Time derivative of the stacked chief-absolute + deputy-relative state."""
    n_dep = (x.shape[0] - 6) // 6
    out = np.empty_like(x)
    r1 = x[0:3]
    a1 = _accel(r1, mu)
    out[0:3] = x[3:6]
    out[3:6] = a1
    for j in range(n_dep):
        o = 6 + 6 * j
        rj = r1 + x[o : o + 3]
        out[o : o + 3] = x[o + 3 : o + 6]
        out[o + 3 : o + 6] = _accel(rj, mu) - a1
    return out


@njit(cache=True)
def formation_jacobian(x, mu=MU):
    n = x.shape[0]
    n_dep = (n - 6) // 6
    F = np.zeros((n, n))
    r1 = x[0:3]
    g1 = _gradient(r1, mu)
    for a in range(3):
        F[a, 3 + a] = 1.0
    F[3:6, 0:3] = g1
    for j in range(n_dep):
        o = 6 + 6 * j
        gj = _gradient(r1 + x[o : o + 3], mu)
        for a in range(3):
            F[o + a, o + 3 + a] = 1.0
        F[o + 3 : o + 6, 0:3] = gj - g1
        F[o + 3 : o + 6, o : o + 3] = gj
    return F


@njit(cache=True)
def _variational_rhs(y, n, mu):
    x = y[:n]
    phi = y[n:].reshape((n, n))
    out = np.empty_like(y)
    out[:n] = formation_rhs(x, mu)
    out[n:] = (formation_jacobian(x, mu) @ phi).reshape(n * n)
    return out


@dataclass(frozen=True)
class PropagatorConfig:
    method: str = "adaptive_rk45"  # adaptive_rk45 | fixed_rk4 | euler
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    max_step: float = math.inf

    def __post_init__(self):
        if self.method not in ("adaptive_rk45", "fixed_rk4", "euler"):
            raise ValueError(f"unknown propagation method {self.method!r}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


TIGHT = PropagatorConfig(rel_tol=1e-12, abs_tol=1e-12)


def _fixed_steps(t_span: float, max_step: float) -> tuple[int, float]:
    if not math.isfinite(max_step):
        return 1, t_span
    n = max(1, int(math.ceil(t_span / max_step - 1e-12)))
    return n, t_span / n


def _rk4(fun, y, h):
    k1 = fun(y)
    k2 = fun(y + 0.5 * h * k1)
    k3 = fun(y + 0.5 * h * k2)
    k4 = fun(y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def propagate_samples(x0, times, cfg: PropagatorConfig = PropagatorConfig(), with_stm: bool = False, mu: float = MU):
    """Propagate the stacked state and sample it at ``times`` (seconds from x0's epoch).

    ``times`` must be non-decreasing and start at or after 0. Returns
    ``(states, stms)`` with shapes ``(K, n)`` and ``(K, n, n)``; ``stms`` is
    ``None`` unless ``with_stm``. STMs map perturbations at t=0 to each sample.
    """
    x0 = np.asarray(x0, dtype=float)
    times = np.asarray(times, dtype=float)
    n = x0.shape[0]
    if (n - 6) % 6 or n < 6:
        raise ValueError("stacked state length must be 6 + 6k")
    if times.ndim != 1 or times.size == 0 or times[0] < 0 or np.any(np.diff(times) < 0):
        raise ValueError("sample times must be a non-empty, non-decreasing sequence >= 0")

    y0 = np.concatenate([x0, np.eye(n).ravel()]) if with_stm else x0.copy()
    if with_stm:
        fun = lambda y: _variational_rhs(y, n, mu)  # noqa: E731
    else:
        fun = lambda y: formation_rhs(y, mu)  # noqa: E731

    if cfg.method == "adaptive_rk45":
        t_end = float(times[-1])
        if t_end == 0.0:
            ys = np.repeat(y0[None, :], times.size, axis=0)
        else:
            sol = solve_ivp(
                lambda t, y: fun(y),
                (0.0, t_end),
                y0,
                method="RK45",
                t_eval=times,
                rtol=cfg.rel_tol,
                atol=cfg.abs_tol,
                max_step=cfg.max_step,
            )
            if sol.status != 0:
                raise PropagationError(sol.message)
            ys = sol.y.T
    else:
        ys = np.empty((times.size, y0.size))
        y = y0
        t = 0.0
        for k, tk in enumerate(times):
            if tk > t:
                y = _fixed_advance(fun, y, tk - t, cfg, n, with_stm, mu)
                t = tk
            ys[k] = y
    if not np.all(np.isfinite(ys)):
        raise PropagationError("non-finite state during propagation")
    states = ys[:, :n]
    stms = ys[:, n:].reshape(times.size, n, n) if with_stm else None
    return states, stms


def _fixed_advance(fun, y, span, cfg, n, with_stm, mu):
    steps, h = _fixed_steps(span, cfg.max_step)
    for _ in range(steps):
        if cfg.method == "fixed_rk4":
            y = _rk4(fun, y, h)
        else:
            x = y[:n]
            x_new = x + h * formation_rhs(x, mu)
            if with_stm:
                phi = y[n:].reshape(n, n)
                phi = (np.eye(n) + h * formation_jacobian(x, mu)) @ phi
                y = np.concatenate([x_new, phi.ravel()])
            else:
                y = x_new
    return y


def propagate(x, dt: float, cfg: PropagatorConfig = PropagatorConfig(), with_stm: bool = False, mu: float = MU):
    """Advance the stacked formation state by ``dt`` seconds.

    Returns ``(x_new, phi)``; ``phi`` is None unless ``with_stm``. For the
    euler method with ``dt <= max_step`` the STM is exactly ``I + F dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    states, stms = propagate_samples(x, np.array([0.0, dt]), cfg, with_stm, mu)
    return states[-1], (stms[-1] if with_stm else None)


# --- truth model --------------------------------------------------------------


@dataclass(frozen=True)
class CircularEphemeris:
    """Third body on a circular orbit about the Earth."""

    radius: float  # km
    rate: float  # rad/s
    phase0: float = 0.0  # rad
    inclination: float = 0.0  # rad, plane tilt about the x axis

    def position(self, t: float) -> np.ndarray:
        u = self.phase0 + self.rate * t
        ci, si = math.cos(self.inclination), math.sin(self.inclination)
        cu, su = math.cos(u), math.sin(u)
        return self.radius * np.array([cu, su * ci, su * si])


SUN_EPHEMERIS = CircularEphemeris(EARTH.au, 2 * math.pi / (365.25 * DAY))
MOON_EPHEMERIS = CircularEphemeris(384400.0, 2 * math.pi / (27.32 * DAY), 0.0, math.radians(5.14))


@dataclass(frozen=True)
class TruthModelConfig:
    enable_j2: bool = True
    enable_lunisolar: bool = True
    enable_srp: bool = True
    srp_area_to_mass: float = 0.01  # m^2/kg
    sun_ephemeris: CircularEphemeris = field(default=SUN_EPHEMERIS)
    moon_ephemeris: CircularEphemeris = field(default=MOON_EPHEMERIS)

    def __post_init__(self):
        if self.srp_area_to_mass < 0:
            raise ValueError("area-to-mass ratio must be non-negative")


KEPLER_ONLY = TruthModelConfig(enable_j2=False, enable_lunisolar=False, enable_srp=False)


def _third_body(r, r3, mu3):
    d = r3[None, :] - r
    dn = np.linalg.norm(d, axis=1)[:, None]
    return mu3 * (d / dn**3 - r3 / np.linalg.norm(r3) ** 3)


def in_cylindrical_shadow(r, sun_dir, body_radius: float = R_EARTH):
    """True where positions lie inside the Earth's cylindrical shadow."""
    r = np.atleast_2d(r)
    along = r @ sun_dir
    perp = np.linalg.norm(r - along[:, None] * sun_dir[None, :], axis=1)
    return (along < 0.0) & (perp < body_radius)


def truth_accel(r, t: float, cfg: TruthModelConfig = TruthModelConfig(), mu: float = MU) -> np.ndarray:
    """Accelerations (km/s^2) on spacecraft at absolute positions ``r`` (N x 3)."""
    r = np.atleast_2d(np.asarray(r, dtype=float))
    rn = np.linalg.norm(r, axis=1)[:, None]
    acc = -mu * r / rn**3
    if cfg.enable_j2:
        z2 = (r[:, 2:3] / rn) ** 2
        k = -1.5 * J2 * mu * R_EARTH**2 / rn**5
        acc = acc + k * r * np.hstack([1 - 5 * z2, 1 - 5 * z2, 3 - 5 * z2])
    if cfg.enable_lunisolar or cfg.enable_srp:
        r_sun = cfg.sun_ephemeris.position(t)
    if cfg.enable_lunisolar:
        acc = acc + _third_body(r, r_sun, MU_SUN)
        acc = acc + _third_body(r, cfg.moon_ephemeris.position(t), MU_MOON)
    if cfg.enable_srp and cfg.srp_area_to_mass > 0:
        d = r - r_sun[None, :]
        dn = np.linalg.norm(d, axis=1)[:, None]
        # N/m^2 * m^2/kg = m/s^2 -> km/s^2
        mag = EARTH.srp_pressure * cfg.srp_area_to_mass * 1e-3 * (EARTH.au / dn) ** 2
        lit = ~in_cylindrical_shadow(r, r_sun / np.linalg.norm(r_sun))
        acc = acc + mag * d / dn * lit[:, None]
    return acc


def propagate_truth(
    states0,
    times,
    cfg: TruthModelConfig = TruthModelConfig(),
    rtol: float = 1e-12,
    atol: float = 1e-10,
) -> np.ndarray:
    """Propagate absolute ECI states ``(N, 6)`` of all spacecraft together.

    Returns an array ``(K, N, 6)`` sampled at ``times`` (seconds past t0 = 0).
    """
    s0 = np.atleast_2d(np.asarray(states0, dtype=float))
    n_sc = s0.shape[0]
    times = np.asarray(times, dtype=float)

    def rhs(t, y):
        s = y.reshape(n_sc, 6)
        out = np.empty_like(s)
        out[:, :3] = s[:, 3:]
        out[:, 3:] = truth_accel(s[:, :3], t, cfg)
        return out.ravel()

    sol = solve_ivp(rhs, (0.0, float(times[-1])), s0.ravel(), method="DOP853", rtol=rtol, atol=atol, dense_output=True)
    if sol.status != 0:
        raise PropagationError(sol.message)
    return sol.sol(times).T.reshape(times.size, n_sc, 6)
