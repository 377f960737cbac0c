"""Observability and Fisher-information matrices and their singular-value metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .astro import CartesianState, RelativeState
from .dynamics import MU, gravity_gradient, gravity_gradient_rate
from .measurement import RANGE_AND_BEARING, NoiseSpec, Pair, eclipsed_mask, measurement_jacobian


@dataclass(frozen=True)
class LocalObsMatrix:
    m: np.ndarray
    epoch: float = 0.0


@dataclass(frozen=True)
class SrSfim:
    matrix: np.ndarray
    epochs: np.ndarray
    eclipsed: np.ndarray  # (K, n_pairs) mask of blocked links

    @property
    def uneclipsed_ratio(self) -> float:
        if self.eclipsed.size == 0:
            return 1.0
        return float(1.0 - self.eclipsed.mean())


@dataclass(frozen=True)
class SvMetrics:
    singular_values: np.ndarray
    vt: np.ndarray
    lui: float
    cn: float
    neg_recip_cn: float
    rank: int

    @property
    def dominant_state_min(self) -> int:
        return int(np.argmax(np.abs(self.vt[-1])))

    @property
    def dominant_state_max(self) -> int:
        return int(np.argmax(np.abs(self.vt[0])))

    def dominant_states(self) -> np.ndarray:
        """Index of the largest-magnitude component of each right singular vector."""
        return np.argmax(np.abs(self.vt), axis=1)


def state_labels(n_dep: int) -> list[str]:
    labels = [f"{q}_{c}" for q in ("r", "v") for c in "xyz"]
    for j in range(n_dep):
        sfx = "" if n_dep == 1 else str(j + 2)
        labels += [f"d{q}{sfx}_{c}" for q in ("r", "v") for c in "xyz"]
    return labels


def sv_metrics(matrix) -> SvMetrics:
    """Smallest singular value (as the negative LUI), condition number and rank.

    An all-zero matrix gives ``lui = 0`` and ``cn = inf``.
    """
    A = np.asarray(matrix, dtype=float)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    smax, smin = float(s[0]), float(s[-1])
    if smax == 0.0:
        return SvMetrics(s, vt, 0.0, math.inf, 0.0, 0)
    tol = smax * max(A.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    cn = smax / smin if smin > 0 else math.inf
    return SvMetrics(s, vt, -smin, cn, -1.0 / cn, rank)


def local_obs_matrix(chief: CartesianState, deputy: RelativeState, mu: float = MU) -> LocalObsMatrix:
    """Lie-derivative observability matrix of a chief/deputy pair with relative-position output.

    Block form ``[[0, 0, I, 0], [0, 0, 0, I], [G1-G0, 0, G1, 0],
    [dG1-dG0, G1-G0, dG1, G1]]`` over ``[r0, v0, dr, dv]``.
    """
    r0, v0 = chief.r, chief.v
    r1, v1 = r0 + deputy.dr, v0 + deputy.dv
    g0, g1 = gravity_gradient(r0, mu), gravity_gradient(r1, mu)
    gd0, gd1 = gravity_gradient_rate(r0, v0, mu), gravity_gradient_rate(r1, v1, mu)
    eye, z = np.eye(3), np.zeros((3, 3))
    m = np.block(
        [
            [z, z, eye, z],
            [z, z, z, eye],
            [g1 - g0, z, g1, z],
            [gd1 - gd0, g1 - g0, gd1, g1],
        ]
    )
    return LocalObsMatrix(m, chief.epoch)


def observation_matrix(x, pairs: Sequence[Pair], modes: Mapping[Pair, str] | None = None, noise: NoiseSpec | Mapping[Pair, NoiseSpec] | None = None):
    """Measurement Jacobian over the stacked chief/relative state.

    Rows are ordered by pair then (range, ra, dec). With ``noise`` each row is
    divided by its standard deviation.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    modes = dict(modes or {})
    rows = []
    for a, b in pairs:
        pa = np.zeros(3) if a == 1 else x[6 + 6 * (a - 2) : 9 + 6 * (a - 2)]
        pb = np.zeros(3) if b == 1 else x[6 + 6 * (b - 2) : 9 + 6 * (b - 2)]
        J, comps = measurement_jacobian(pb - pa, modes.get((a, b), RANGE_AND_BEARING))
        if noise is not None:
            spec = noise.get((a, b)) if isinstance(noise, Mapping) else noise
            sig = {"range": spec.sigma_range, "ra": spec.sigma_ra, "dec": spec.sigma_dec}
            J = J / np.array([sig[c] for c in comps])[:, None]
        H = np.zeros((J.shape[0], n))
        if b != 1:
            H[:, 6 + 6 * (b - 2) : 9 + 6 * (b - 2)] += J
        if a != 1:
            H[:, 6 + 6 * (a - 2) : 9 + 6 * (a - 2)] -= J
        rows.append(H)
    return np.vstack(rows)


def link_eclipses(states, pairs: Sequence[Pair]) -> np.ndarray:
    """(K, n_pairs) mask of Earth-blocked links along a stacked-state trajectory."""
    states = np.atleast_2d(states)
    r1 = states[:, :3]

    def absolute(sc):
        return r1 if sc == 1 else r1 + states[:, 6 + 6 * (sc - 2) : 9 + 6 * (sc - 2)]

    return np.column_stack([eclipsed_mask(absolute(a), absolute(b)) for a, b in pairs])


def srsfim(
    states,
    stms,
    epochs,
    pairs: Sequence[Pair] = ((1, 2),),
    modes: Mapping[Pair, str] | None = None,
    noise: NoiseSpec | Mapping[Pair, NoiseSpec] | None = None,
    eclipsed=None,
) -> SrSfim:
    """Square-root information matrix stacked from whitened ``H_k Phi_{k|0}``.

    Rows of blocked links are zeroed. ``eclipsed`` defaults to the Earth
    occultation mask computed from ``states``.
    """
    if stms is None:
        raise ValueError("state transition matrices are required")
    states = np.atleast_2d(states)
    stms = np.asarray(stms)
    if stms.shape[0] != states.shape[0]:
        raise ValueError("one STM per sample epoch is required")
    if eclipsed is None:
        eclipsed = link_eclipses(states, pairs)
    eclipsed = np.asarray(eclipsed, dtype=bool).reshape(states.shape[0], -1)
    if noise is None:
        raise ValueError("noise spec is required for whitening")
    blocks = []
    for k in range(states.shape[0]):
        H = observation_matrix(states[k], pairs, modes, noise)
        if eclipsed[k].any():
            H = _zero_blocked(H, states[k], pairs, modes, eclipsed[k])
        blocks.append(H @ stms[k])
    return SrSfim(np.vstack(blocks), np.asarray(epochs, dtype=float), eclipsed)


def _zero_blocked(H, x, pairs, modes, blocked):
    modes = dict(modes or {})
    r = 0
    H = H.copy()
    for (a, b), off in zip(pairs, blocked):
        pa = np.zeros(3) if a == 1 else x[6 + 6 * (a - 2) : 9 + 6 * (a - 2)]
        pb = np.zeros(3) if b == 1 else x[6 + 6 * (b - 2) : 9 + 6 * (b - 2)]
        nrow = measurement_jacobian(pb - pa, modes.get((a, b), RANGE_AND_BEARING))[0].shape[0]
        if off:
            H[r : r + nrow] = 0.0
        r += nrow
    return H


def discrete_obs_matrix(stms, observation_matrices) -> np.ndarray:
    """Stack ``H_k Phi_{k|0}`` without whitening."""
    if len(stms) != len(observation_matrices):
        raise ValueError("need one observation matrix per STM")
    return np.vstack([np.atleast_2d(H) @ phi for H, phi in zip(observation_matrices, stms)])


def mean_local_lui(states, eclipsed=None, mu: float = MU) -> float:
    """Local-observability LUI averaged over a two-spacecraft trajectory.

    Epochs where the link is blocked contribute zero.
    """
    states = np.atleast_2d(states)
    if eclipsed is None:
        eclipsed = link_eclipses(states, [(1, 2)])[:, 0]
    total = 0.0
    for k in range(states.shape[0]):
        if eclipsed[k]:
            continue
        m = local_obs_matrix(CartesianState(states[k, :3], states[k, 3:6]), RelativeState(states[k, 6:9], states[k, 9:12]), mu)
        total += sv_metrics(m.m).lui
    return total / states.shape[0]


def aligned_deputy_lui(chief: CartesianState, radius: float, mu: float = MU) -> float:
    """LUI of the local observability matrix with a deputy on a circular equatorial
    orbit of the given radius, radially aligned with the chief."""
    rhat = chief.r / np.linalg.norm(chief.r)
    h = np.cross(chief.r, chief.v)
    that = np.cross(h / np.linalg.norm(h), rhat)
    r_dep = radius * rhat
    v_dep = math.sqrt(mu / radius) * that
    m = local_obs_matrix(chief, RelativeState(r_dep - chief.r, v_dep - chief.v), mu)
    return sv_metrics(m.m).lui


def write_metrics_csv(path, epochs, metrics: Sequence[SvMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch_s", "sigma_min", "sigma_max", "cn", "dominant_state_min", "dominant_state_max"])
        for t, m in zip(epochs, metrics):
            w.writerow(
                [repr(float(t)), repr(float(m.singular_values[-1])), repr(float(m.singular_values[0])),
                 repr(float(m.cn)), m.dominant_state_min, m.dominant_state_max]
            )
