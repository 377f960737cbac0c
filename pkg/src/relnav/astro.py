"""Orbital elements, Cartesian states and the conversions between them.

All quantities are in km, km/s, s and radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi
_DEGENERATE_TOL = 1e-11


@dataclass(frozen=True)
class Constants:
    mu_earth: float = 398600.4418  # km^3/s^2
    r_earth: float = 6378.137  # km
    au: float = 149597870.7  # km
    srp_pressure: float = 4.56e-6  # N/m^2 at 1 AU

    def __post_init__(self):
        for name in ("mu_earth", "r_earth", "au", "srp_pressure"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


EARTH = Constants()


def wrap_angle(x: float) -> float:
    """Wrap to [0, 2pi)."""
    y = math.fmod(x, TWO_PI)
    if y < 0:
        y += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2pi
    return 0.0 if y >= TWO_PI else y


def wrap_pi(x):
    """Wrap to (-pi, pi]. Works elementwise on arrays."""
    y = np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi
    y = np.where(y == -math.pi, math.pi, y)
    return float(y) if np.ndim(y) == 0 else y


@dataclass(frozen=True)
class Coe:
    """Classical orbital elements of an elliptic orbit."""

    a: float
    e: float
    i: float
    raan: float
    argp: float
    nu: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semi-major axis must be positive, got {self.a}")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"only elliptic orbits are supported (0 <= e < 1), got e={self.e}")
        if not 0.0 <= self.i <= math.pi:
            raise ValueError(f"inclination must lie in [0, pi], got {self.i}")
        for name in ("raan", "argp", "nu"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def from_degrees(cls, a, e, i, raan, argp, nu) -> "Coe":
        return cls(a, e, math.radians(i), math.radians(raan), math.radians(argp), math.radians(nu))

    def to_degrees(self) -> tuple[float, ...]:
        return (
            self.a,
            self.e,
            math.degrees(self.i),
            math.degrees(self.raan),
            math.degrees(self.argp),
            math.degrees(self.nu),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.e, self.i, self.raan, self.argp, self.nu])


@dataclass(frozen=True)
class CartesianState:
    r: np.ndarray
    v: np.ndarray
    epoch: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])

    @classmethod
    def from_array(cls, x, epoch: float = 0.0) -> "CartesianState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6], epoch)


@dataclass(frozen=True)
class RelativeState:
    """Deputy state relative to the chief, inertial axes centered on the chief."""

    dr: np.ndarray
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        dr = np.asarray(self.dr, dtype=float).reshape(3)
        dv = np.asarray(self.dv, dtype=float).reshape(3)
        if not (np.all(np.isfinite(dr)) and np.all(np.isfinite(dv))):
            raise ValueError("relative state must be finite")
        object.__setattr__(self, "dr", dr)
        object.__setattr__(self, "dv", dv)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.dr, self.dv])


def _rot_pqw_to_eci(raan: float, i: float, argp: float) -> np.ndarray:
    cO, sO = math.cos(raan), math.sin(raan)
    ci, si = math.cos(i), math.sin(i)
    cw, sw = math.cos(argp), math.sin(argp)
    return np.array(
        [
            [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
            [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
            [sw * si, cw * si, ci],
        ]
    )


def coe_to_cartesian(coe: Coe, c: Constants = EARTH, epoch: float = 0.0) -> CartesianState:
    if coe.e >= 1.0:
        raise ValueError("hyperbolic and parabolic orbits are not supported")
    p = coe.a * (1.0 - coe.e**2)
    cn, sn = math.cos(coe.nu), math.sin(coe.nu)
    rmag = p / (1.0 + coe.e * cn)
    r_pqw = np.array([rmag * cn, rmag * sn, 0.0])
    vfac = math.sqrt(c.mu_earth / p)
    v_pqw = np.array([-vfac * sn, vfac * (coe.e + cn), 0.0])
    rot = _rot_pqw_to_eci(coe.raan, coe.i, coe.argp)
    return CartesianState(rot @ r_pqw, rot @ v_pqw, epoch)


def cartesian_to_coe(s: CartesianState, c: Constants = EARTH) -> Coe:
    """Inverse of :func:`coe_to_cartesian`.

    Circular orbits get ``argp = 0`` with the argument of latitude folded into
    ``nu``; equatorial orbits get ``raan = 0`` with the longitude folded into
    ``argp``.
    """
    mu = c.mu_earth
    r, v = s.r, s.v
    rmag = float(np.linalg.norm(r))
    if rmag == 0.0:
        raise ValueError("position must be nonzero")
    h = np.cross(r, v)
    hmag = float(np.linalg.norm(h))
    if hmag == 0.0:
        raise ValueError("rectilinear orbit has no orbital plane")
    energy = 0.5 * float(v @ v) - mu / rmag
    if energy >= 0.0:
        raise ValueError("state is not on an elliptic orbit")
    a = -mu / (2.0 * energy)
    e_vec = np.cross(v, h) / mu - r / rmag
    e = float(np.linalg.norm(e_vec))
    inc = math.acos(max(-1.0, min(1.0, h[2] / hmag)))

    # node vector; for equatorial orbits fix it along +x
    node = np.array([-h[1], h[0], 0.0])
    nmag = float(np.linalg.norm(node))
    equatorial = inc < _DEGENERATE_TOL or math.pi - inc < _DEGENERATE_TOL
    if equatorial:
        node_hat = np.array([1.0, 0.0, 0.0])
        raan = 0.0
    else:
        node_hat = node / nmag
        raan = math.atan2(node_hat[1], node_hat[0])

    # in-plane reference direction orthogonal to node_hat
    h_hat = h / hmag
    m_hat = np.cross(h_hat, node_hat)

    def in_plane_angle(vec):
        return math.atan2(float(vec @ m_hat), float(vec @ node_hat))

    u = in_plane_angle(r)  # argument of latitude (or true longitude)
    if e < _DEGENERATE_TOL:
        e = 0.0
        argp = 0.0
        nu = u
    else:
        argp = in_plane_angle(e_vec)
        nu = u - argp
    return Coe(a, e, inc, raan, argp, nu)


def apsides_to_shape(r1: float, r2: float) -> tuple[float, float]:
    """Semi-major axis and eccentricity from the two apsis radii (any order)."""
    if not (r1 > 0 and r2 > 0):
        raise ValueError("apsis radii must be positive")
    a = 0.5 * (r1 + r2)
    e = abs(r1 - r2) / (r1 + r2)
    return a, e


def true_to_eccentric_anomaly(nu: float, e: float) -> float:
    return math.atan2(math.sqrt(1.0 - e * e) * math.sin(nu), e + math.cos(nu))


def true_to_mean_anomaly(nu: float, e: float) -> float:
    if not 0.0 <= e < 1.0:
        raise ValueError("eccentricity must lie in [0, 1)")
    E = true_to_eccentric_anomaly(nu, e)
    return wrap_angle(E - e * math.sin(E))


def solve_kepler(M: float, e: float, tol: float = 1e-14, max_iter: int = 50) -> float:
    """Eccentric anomaly from mean anomaly by Newton iteration."""
    M = wrap_angle(M)
    E = M if e < 0.8 else math.pi
    for _ in range(max_iter):
        f = E - e * math.sin(E) - M
        step = f / (1.0 - e * math.cos(E))
        E -= step
        if abs(step) < tol:
            break
    return E


def mean_to_true_anomaly(M: float, e: float) -> float:
    if not 0.0 <= e < 1.0:
        raise ValueError("eccentricity must lie in [0, 1)")
    E = solve_kepler(M, e)
    return wrap_angle(math.atan2(math.sqrt(1.0 - e * e) * math.sin(E), math.cos(E) - e))


def orbital_period(a: float, c: Constants = EARTH) -> float:
    if not a > 0:
        raise ValueError("semi-major axis must be positive")
    return TWO_PI * math.sqrt(a**3 / c.mu_earth)


def specific_energy(s: CartesianState, c: Constants = EARTH) -> float:
    return 0.5 * float(s.v @ s.v) - c.mu_earth / float(np.linalg.norm(s.r))


def angular_momentum(s: CartesianState) -> float:
    return float(np.linalg.norm(np.cross(s.r, s.v)))
