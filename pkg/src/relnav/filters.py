"""Extended Kalman filters for formation navigation.

Two variants share one measurement update:

* ``pva``: relative-only position/velocity/acceleration kinematics per
  deputy, linear and time invariant, ``9 * (N - 1)`` states.
* ``absrel``: the chief's absolute ECI state plus every deputy's inertial
  relative state under point-mass gravity, Euler-discretized,
  ``6 + 6 * (N - 1)`` states.

The inner loops are compiled with numba; the Python functions here are thin
wrappers around the same kernels used by :func:`run_filter`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from numba import njit

from .dynamics import MU, formation_jacobian, formation_rhs
from .measurement import RF_VISION, MeasurementSet, NoiseSpec, Pair

A_PRIORI = 0
A_POSTERIORI = 1

PVA_Q_DEFAULT = (1e-7 * 1e-3) ** 2  # (1e-7 m/s^3)^2 in (km/s^3)^2
ABS_Q_DEFAULT = (1e-6) ** 2  # (km/s^2)^2
REL_Q_DEFAULT = (1e-9) ** 2


class FilterDivergence(RuntimeError):
    """Covariance lost positive semi-definiteness or the state went non-finite."""


# --- PVA model ----------------------------------------------------------------


def pva_transition(dt: float, n_dep: int) -> np.ndarray:
    """Exact matrix exponential of the PVA kinematics over ``dt``."""
    blk = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    return np.kron(np.eye(n_dep), np.kron(blk, np.eye(3)))


def pva_process_noise(dt: float, q) -> np.ndarray:
    """Closed-form discrete process noise for white jerk of intensity ``q`` per deputy."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    blk = np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )
    return np.kron(np.diag(q), np.kron(blk, np.eye(3)))


@njit(cache=True)
def _linear_predict(x, P, phi, qd):
    x_new = phi @ x
    P_new = phi @ P @ phi.T + qd
    return x_new, 0.5 * (P_new + P_new.T)


# --- absolute + relative model ------------------------------------------------


@njit(cache=True)
def _absrel_predict(x, P, dt, q_vel, mu):
    n = x.shape[0]
    f = formation_rhs(x, mu)
    phi = np.eye(n) + formation_jacobian(x, mu) * dt
    x_new = x + f * dt
    # trapezoid of phi(s) Q phi(s)^T over [0, dt], Q acting on velocity rows
    qc = np.zeros((n, n))
    for b in range(n // 6):
        for a in range(3):
            qc[6 * b + 3 + a, 6 * b + 3 + a] = q_vel[b]
    qd = 0.5 * dt * (qc + phi @ qc @ phi.T)
    P_new = phi @ P @ phi.T + qd
    return x_new, 0.5 * (P_new + P_new.T)


# --- measurement update -------------------------------------------------------


@njit(cache=True)
def _wrap_pi(a):
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a == -math.pi:
        a = math.pi
    return a


@njit(cache=True)
def _rel_pos(x, pos_idx, sc):
    o = pos_idx[sc]
    if o < 0:
        return np.zeros(3)
    return x[o : o + 3].copy()


@njit(cache=True)
def _ekf_update(x, P, pos_idx, sc_a, sc_b, vals, sigs, gate):
    """Batch update with every measurement taken at one epoch.

    ``vals`` holds (range, ra, dec) per measurement with NaN for absent
    components. Returns (x, P, rows used, rows gated).
    """
    n = x.shape[0]
    m = sc_a.shape[0]
    max_rows = 3 * m
    H = np.zeros((max_rows, n))
    nu = np.zeros(max_rows)
    rvar = np.zeros(max_rows)
    k = 0
    for i in range(m):
        a = sc_a[i]
        b = sc_b[i]
        dr = _rel_pos(x, pos_idx, b) - _rel_pos(x, pos_idx, a)
        rho2 = dr[0] * dr[0] + dr[1] * dr[1] + dr[2] * dr[2]
        rho = math.sqrt(rho2)
        if rho == 0.0:
            continue
        rxy2 = dr[0] * dr[0] + dr[1] * dr[1]
        rxy = math.sqrt(rxy2)
        oa = pos_idx[a]
        ob = pos_idx[b]
        for comp in range(3):
            y = vals[i, comp]
            if math.isnan(y):
                continue
            row = np.zeros(3)
            if comp == 0:
                row[:] = dr / rho
                innov = y - rho
            elif comp == 1:
                if rxy <= 1e-9 * rho:
                    continue
                row[0] = -dr[1] / rxy2
                row[1] = dr[0] / rxy2
                innov = _wrap_pi(y - math.atan2(dr[1], dr[0]))
            else:
                if rxy == 0.0:
                    continue
                row[0] = -dr[0] * dr[2] / (rho2 * rxy)
                row[1] = -dr[1] * dr[2] / (rho2 * rxy)
                row[2] = rxy / rho2
                innov = y - math.asin(min(1.0, max(-1.0, dr[2] / rho)))
            if ob >= 0:
                H[k, ob : ob + 3] += row
            if oa >= 0:
                H[k, oa : oa + 3] -= row
            nu[k] = innov
            rvar[k] = sigs[i, comp] ** 2
            k += 1
    if k == 0:
        return x, P, 0, 0
    H = H[:k]
    nu = nu[:k]
    rvar = rvar[:k]
    PHt = P @ H.T
    S = H @ PHt
    for r in range(k):
        S[r, r] += rvar[r]
    n_gated = 0
    if gate > 0.0:
        keep = np.ones(k, dtype=np.bool_)
        for r in range(k):
            if abs(nu[r]) > gate * math.sqrt(S[r, r]):
                keep[r] = False
                n_gated += 1
        if n_gated == k:
            return x, P, 0, n_gated
        if n_gated > 0:
            idx = np.nonzero(keep)[0]
            H = H[idx]
            nu = nu[idx]
            rvar = rvar[idx]
            PHt = P @ H.T
            S = H @ PHt
            for r in range(idx.shape[0]):
                S[r, r] += rvar[r]
    K = np.linalg.solve(S, PHt.T).T
    x_new = x + K @ nu
    IKH = np.eye(n) - K @ H
    P_new = IKH @ P @ IKH.T + (K * rvar) @ K.T
    return x_new, 0.5 * (P_new + P_new.T), H.shape[0], n_gated


# --- filter states ------------------------------------------------------------


@dataclass(frozen=True)
class PvaFilterState:
    x: np.ndarray
    P: np.ndarray
    q: np.ndarray  # per-deputy jerk intensity, (km/s^3)^2

    @property
    def n_dep(self) -> int:
        return self.x.size // 9

    def position_index(self) -> np.ndarray:
        return _pos_index("pva", self.n_dep)


@dataclass(frozen=True)
class AbsRelFilterState:
    x: np.ndarray
    P: np.ndarray
    q_abs: float = ABS_Q_DEFAULT
    q_rel: np.ndarray = field(default_factory=lambda: np.full(5, REL_Q_DEFAULT))

    def __post_init__(self):
        q_rel = np.broadcast_to(np.asarray(self.q_rel, dtype=float), (self.n_dep,)).copy()
        object.__setattr__(self, "q_rel", q_rel)

    @property
    def n_dep(self) -> int:
        return (self.x.size - 6) // 6

    def q_vector(self) -> np.ndarray:
        return np.concatenate([[self.q_abs], self.q_rel])

    def position_index(self) -> np.ndarray:
        return _pos_index("absrel", self.n_dep)


def _pos_index(variant: str, n_dep: int) -> np.ndarray:
    """Offset of each spacecraft's relative position in the state, by id (index 0 unused)."""
    idx = np.full(n_dep + 2, -1, dtype=np.int64)
    for sc in range(2, n_dep + 2):
        idx[sc] = 9 * (sc - 2) if variant == "pva" else 6 + 6 * (sc - 2)
    return idx


def predict_pva(state: PvaFilterState, dt: float) -> PvaFilterState:
    phi = pva_transition(dt, state.n_dep)
    x, P = _linear_predict(state.x, state.P, phi, pva_process_noise(dt, state.q))
    return replace(state, x=x, P=P)


def predict_absrel(state: AbsRelFilterState, dt: float, mu: float = MU) -> AbsRelFilterState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not np.linalg.norm(state.x[:3]) > 0:
        raise ValueError("chief position estimate must be nonzero")
    x, P = _absrel_predict(state.x, state.P, float(dt), state.q_vector(), mu)
    return replace(state, x=x, P=P)


def _pack(measurements, noise_for) -> tuple:
    ms = list(measurements)
    sc_a = np.array([m.pair[0] for m in ms], dtype=np.int64)
    sc_b = np.array([m.pair[1] for m in ms], dtype=np.int64)
    nan = math.nan
    vals = np.array(
        [[nan if v is None else v for v in (m.range, m.ra, m.dec)] for m in ms], dtype=float
    ).reshape(-1, 3)
    sigs = np.array([noise_for(m.pair).sigmas for m in ms], dtype=float).reshape(-1, 3)
    return sc_a, sc_b, vals, sigs


def _noise_lookup(noise, pair_noise: Mapping[Pair, NoiseSpec] | None):
    pair_noise = dict(pair_noise or {})
    return lambda pair: pair_noise.get(tuple(pair), noise)


def ekf_update(
    state,
    measurements,
    noise: NoiseSpec = RF_VISION,
    pair_noise: Mapping[Pair, NoiseSpec] | None = None,
    gate: float = 5.0,
    check_psd: bool = True,
):
    """Fold all measurements of one epoch into ``state``.

    Works for both filter states. Measurement modes are carried by the
    measurements themselves (absent bearing components are skipped).
    ``gate <= 0`` disables innovation gating.
    """
    sc_a, sc_b, vals, sigs = _pack(measurements, _noise_lookup(noise, pair_noise))
    if sc_a.size == 0:
        return state
    x, P, _, _ = _ekf_update(state.x, state.P, state.position_index(), sc_a, sc_b, vals, sigs, float(gate))
    if check_psd:
        _check_psd(P)
    return replace(state, x=x, P=P)


def _check_psd(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)):
        raise FilterDivergence("non-finite covariance")
    lam = np.linalg.eigvalsh(P).min()
    if lam < -1e-10 * np.trace(P):
        raise FilterDivergence(f"covariance not positive semi-definite (min eigenvalue {lam:.3e})")


# --- full run -----------------------------------------------------------------


@dataclass
class FilterOutput:
    """Per-epoch estimates at the filter cadence."""

    times: np.ndarray
    x: np.ndarray
    sigma: np.ndarray | None
    flag: np.ndarray
    variant: str
    n_gated: int = 0
    diverged: bool = False

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["epoch_s", "flag"] + [f"x{k}" for k in range(n)]
            if self.sigma is not None:
                head += [f"sigma{k}" for k in range(n)]
            w.writerow(head)
            for k in range(self.times.size):
                row = [repr(float(self.times[k])), "a_posteriori" if self.flag[k] else "a_priori"]
                row += [repr(float(v)) for v in self.x[k]]
                if self.sigma is not None:
                    row += [repr(float(v)) for v in self.sigma[k]]
                w.writerow(row)


@njit(cache=True)
def _run_kernel(
    is_pva, x0, P0, n_steps, dt, starts, sc_a, sc_b, vals, sigs, pos_idx, phi, qd, q_vel, gate, mu,
    out_x, out_sd, out_flag, store_sd,
):
    x = x0.copy()
    P = P0.copy()
    gated = 0
    for k in range(n_steps + 1):
        if k > 0:
            if is_pva:
                x, P = _linear_predict(x, P, phi, qd)
            else:
                x, P = _absrel_predict(x, P, dt, q_vel, mu)
        lo = starts[k]
        hi = starts[k + 1]
        flag = 0
        if hi > lo:
            x, P, used, g = _ekf_update(x, P, pos_idx, sc_a[lo:hi], sc_b[lo:hi], vals[lo:hi], sigs[lo:hi], gate)
            gated += g
            if used > 0:
                flag = 1
        for i in range(x.shape[0]):
            if not math.isfinite(x[i]):
                return k, gated
        out_x[k] = x
        out_flag[k] = flag
        if store_sd:
            for i in range(x.shape[0]):
                out_sd[k, i] = math.sqrt(max(P[i, i], 0.0))
    return n_steps + 1, gated


def run_filter(
    state,
    measurements: MeasurementSet,
    duration: float,
    dt: float = 1.0,
    noise: NoiseSpec = RF_VISION,
    pair_noise: Mapping[Pair, NoiseSpec] | None = None,
    gate: float = 5.0,
    store_sigma: bool = False,
    mu: float = MU,
) -> FilterOutput:
    """Run a filter from t=0 to ``duration`` at a fixed cadence ``dt``.

    Predicts every ``dt`` and updates at epochs carrying measurements; the
    output at unmeasured epochs is the a-priori estimate. Measurement epochs
    must fall on the cadence grid.
    """
    is_pva = isinstance(state, PvaFilterState)
    if not (is_pva or isinstance(state, AbsRelFilterState)):
        raise TypeError("state must be a PvaFilterState or AbsRelFilterState")
    if not is_pva and dt > 1.0:
        raise ValueError("Euler prediction is only valid for dt <= 1 s")
    n_steps = int(round(duration / dt))
    times = np.arange(n_steps + 1) * dt
    n = state.x.size

    order = np.argsort(measurements.epoch, kind="stable")
    ep = measurements.epoch[order]
    steps = np.rint(ep / dt).astype(np.int64)
    if ep.size and np.any(np.abs(steps * dt - ep) > 1e-6):
        raise ValueError("measurement epochs must lie on the filter cadence grid")
    keep = steps <= n_steps
    order, steps = order[keep], steps[keep]
    starts = np.searchsorted(steps, np.arange(n_steps + 2)).astype(np.int64)
    sc_a = measurements.sc_a[order].astype(np.int64)
    sc_b = measurements.sc_b[order].astype(np.int64)
    vals = measurements.values[order]
    lookup = _noise_lookup(noise, pair_noise)
    cache: dict = {}
    sigs = np.empty((sc_a.size, 3))
    for i, pair in enumerate(zip(sc_a.tolist(), sc_b.tolist())):
        if pair not in cache:
            cache[pair] = lookup(pair).sigmas
        sigs[i] = cache[pair]

    if is_pva:
        phi = pva_transition(dt, state.n_dep)
        qd = pva_process_noise(dt, state.q)
        q_vel = np.zeros(1)
    else:
        phi = np.zeros((1, 1))
        qd = np.zeros((1, 1))
        q_vel = state.q_vector()
    out_x = np.full((n_steps + 1, n), np.nan)
    out_sd = np.full((n_steps + 1, n), np.nan) if store_sigma else np.zeros((1, n))
    out_flag = np.zeros(n_steps + 1, dtype=np.int8)
    done, gated = _run_kernel(
        is_pva, state.x.astype(float), state.P.astype(float), n_steps, float(dt), starts, sc_a, sc_b, vals,
        sigs, state.position_index(), phi, qd, q_vel, float(gate), mu, out_x, out_sd, out_flag, store_sigma,
    )
    return FilterOutput(
        times,
        out_x,
        out_sd if store_sigma else None,
        out_flag,
        "pva" if is_pva else "absrel",
        n_gated=int(gated),
        diverged=done < n_steps + 1,
    )
