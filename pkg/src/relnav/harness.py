"""Monte Carlo execution and RMS statistics for formation navigation runs."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import propagate_truth
from .filters import AbsRelFilterState, FilterOutput, PvaFilterState, run_filter
from .measurement import TruthTrajectory, synthesize_measurements
from .scenarios import ScenarioConfig

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int, index: int) -> int:
    """Per-trial seed: the ``index``-th output of a splitmix64 stream started at ``seed``."""
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


@lru_cache(maxsize=4)
def _truth_cached(key):
    cfg: ScenarioConfig = key.cfg
    times = np.arange(int(round(cfg.duration / cfg.dt)) + 1) * cfg.dt
    return TruthTrajectory(times, propagate_truth(cfg.initial_states(), times, cfg.truth))


@dataclass(frozen=True)
class _TruthKey:
    cfg: ScenarioConfig

    def _sig(self):
        c = self.cfg
        return (c.chief, c.offsets.tobytes(), c.new_sc, c.truth, c.duration, c.dt)

    def __hash__(self):
        return hash(self._sig())

    def __eq__(self, other):
        return isinstance(other, _TruthKey) and self._sig() == other._sig()


def simulate_truth(cfg: ScenarioConfig) -> TruthTrajectory:
    """Truth trajectory of every spacecraft at the filter cadence (cached)."""
    return _truth_cached(_TruthKey(cfg))


def true_filter_state(truth: TruthTrajectory, variant: str) -> np.ndarray:
    """Truth expressed in the filter's state layout, for every epoch.

    The PVA acceleration entries are left at zero; only positions and
    velocities are compared.
    """
    s = truth.states
    chief = s[:, 0, :]
    rel = s[:, 1:, :] - chief[:, None, :]
    K, n_dep = rel.shape[0], rel.shape[1]
    if variant == "absrel":
        return np.concatenate([chief, rel.reshape(K, 6 * n_dep)], axis=1)
    out = np.zeros((K, n_dep, 9))
    out[:, :, :6] = rel
    return out.reshape(K, 9 * n_dep)


def initial_filter_state(cfg: ScenarioConfig, truth: TruthTrajectory, rng: np.random.Generator):
    x_true = true_filter_state(truth, cfg.variant)[0].copy()
    n_dep = cfg.n_spacecraft - 1
    new_scale = np.ones(n_dep)
    if cfg.new_sc is not None:
        new_scale[-1] = cfg.alpha_new
    if cfg.variant == "pva":
        x = x_true.copy()
        var = np.empty_like(x)
        for j in range(n_dep):
            o = 9 * j
            x[o : o + 3] += cfg.init_rel_pos * random_direction(rng)
            x[o + 3 : o + 6] += cfg.init_rel_vel * random_direction(rng)
            x[o + 6 : o + 9] = 0.0
            var[o : o + 3] = cfg.init_rel_pos**2
            var[o + 3 : o + 6] = cfg.init_rel_vel**2
            var[o + 6 : o + 9] = cfg.pva_acc_var
        return PvaFilterState(x, np.diag(var), cfg.q_pva * new_scale)
    x = x_true.copy()
    var = np.empty_like(x)
    x[0:3] += cfg.init_abs_pos * random_direction(rng)
    x[3:6] += cfg.init_abs_vel * random_direction(rng)
    var[0:3] = cfg.init_abs_pos**2
    var[3:6] = cfg.init_abs_vel**2
    for j in range(n_dep):
        o = 6 + 6 * j
        x[o : o + 3] += cfg.init_rel_pos * random_direction(rng)
        x[o + 3 : o + 6] += cfg.init_rel_vel * random_direction(rng)
        var[o : o + 3] = cfg.init_rel_pos**2
        var[o + 3 : o + 6] = cfg.init_rel_vel**2
    return AbsRelFilterState(x, np.diag(var), cfg.q_abs, cfg.q_rel * new_scale)


@dataclass
class TrialResult:
    seed: int
    abs_err: np.ndarray | None  # km, chief position error per epoch (absrel only)
    rel_err: np.ndarray  # km, (K, n_dep) relative position error per deputy
    diverged: bool
    n_gated: int


def position_errors(out: FilterOutput, truth: TruthTrajectory) -> tuple[np.ndarray | None, np.ndarray]:
    x_true = true_filter_state(truth, out.variant)
    K = min(out.x.shape[0], x_true.shape[0])
    err = out.x[:K] - x_true[:K]
    if out.variant == "pva":
        n_dep = err.shape[1] // 9
        rel = err.reshape(K, n_dep, 9)[:, :, :3]
        return None, np.linalg.norm(rel, axis=2)
    n_dep = (err.shape[1] - 6) // 6
    rel = err[:, 6:].reshape(K, n_dep, 6)[:, :, :3]
    return np.linalg.norm(err[:, :3], axis=1), np.linalg.norm(rel, axis=2)


def run_trial(cfg: ScenarioConfig, trial: int) -> TrialResult:
    seed = splitmix64(cfg.seed, trial)
    rng = np.random.default_rng(seed)
    truth = simulate_truth(cfg)
    state = initial_filter_state(cfg, truth, rng)
    noise, pair_noise = cfg.synthesis_noise()
    meas = synthesize_measurements(truth, cfg.make_schedule(), cfg.mode_map(), noise, rng, pair_noise=pair_noise)
    out = run_filter(
        state, meas, cfg.duration, cfg.dt, cfg.noise, pair_noise=cfg.pair_noise(), gate=cfg.gate
    )
    abs_err, rel_err = position_errors(out, truth)
    return TrialResult(seed, abs_err, rel_err, out.diverged, out.n_gated)


@dataclass
class RmsReport:
    """Monte Carlo RMS statistics.

    Absolute errors are in km, relative errors in m. Per-trial arrays are
    kept in trial order.
    """

    abs_pos_rms: float
    mean_rel_pos_rms: float
    new_sc_rel_rms: float | None
    per_trial_abs: np.ndarray
    per_trial_rel: np.ndarray
    per_trial_new: np.ndarray | None
    window_start: float
    diverged: list[int] = field(default_factory=list)


def _rms(x: np.ndarray, axis=0) -> np.ndarray:
    return np.sqrt(np.mean(np.square(x), axis=axis))


def _nanmean(x: np.ndarray) -> float:
    """Mean over trials that produced a value; NaN when none did."""
    ok = ~np.isnan(x)
    return float(np.mean(x[ok])) if ok.any() else math.nan


def rms_report(
    trials: list[TrialResult],
    times: np.ndarray,
    window_start: float,
    n_original_deputies: int | None = None,
) -> RmsReport:
    """RMS over epochs at or after ``window_start``, averaged across trials.

    The mean relative figure averages the per-deputy RMS over the original
    deputies; any deputies beyond ``n_original_deputies`` are reported as the
    new spacecraft.
    """
    times = np.asarray(times)
    win = times >= window_start
    if not np.any(win):
        raise ValueError("RMS window is empty")
    per_abs, per_rel, per_new, div = [], [], [], []
    for idx, tr in enumerate(trials):
        K = tr.rel_err.shape[0]
        w = win[:K]
        if not np.any(w) or tr.diverged:
            div.append(idx)
            if not np.any(w):
                per_abs.append(math.nan)
                per_rel.append(math.nan)
                per_new.append(math.nan)
                continue
        n_orig = n_original_deputies or tr.rel_err.shape[1]
        dep_rms = _rms(tr.rel_err[w], axis=0) * 1e3
        per_rel.append(float(np.mean(dep_rms[:n_orig])))
        per_new.append(float(np.mean(dep_rms[n_orig:])) if dep_rms.size > n_orig else math.nan)
        per_abs.append(float(_rms(tr.abs_err[:K][w])) if tr.abs_err is not None else math.nan)
    per_abs = np.array(per_abs)
    per_rel = np.array(per_rel)
    per_new_arr = np.array(per_new)
    has_new = bool(np.any(np.isfinite(per_new_arr)))
    return RmsReport(
        abs_pos_rms=_nanmean(per_abs),
        mean_rel_pos_rms=_nanmean(per_rel),
        new_sc_rel_rms=_nanmean(per_new_arr) if has_new else None,
        per_trial_abs=per_abs,
        per_trial_rel=per_rel,
        per_trial_new=per_new_arr if has_new else None,
        window_start=window_start,
        diverged=div,
    )


def _trial_worker(args):
    cfg, trial = args
    return run_trial(cfg, trial)


def monte_carlo(cfg: ScenarioConfig, trials: int = 40, workers: int = 1, keep_trials: bool = False):
    """Run independent trials and aggregate them into an :class:`RmsReport`.

    Each trial perturbs the initial estimate along random directions and
    draws its own measurement noise; the truth trajectory is shared. Results
    do not depend on ``workers``. With ``keep_trials`` the per-trial error
    histories are returned alongside the report.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, [(cfg, k) for k in range(trials)]))
    else:
        results = [run_trial(cfg, k) for k in range(trials)]
    times = simulate_truth(cfg).times
    report = rms_report(results, times, cfg.window_start, n_original_deputies=len(cfg.offsets) - 1)
    return (report, results) if keep_trials else report
