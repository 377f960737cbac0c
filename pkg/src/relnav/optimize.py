"""Placement of an auxiliary spacecraft that maximizes formation observability.

The chief stays on its reference orbit and the formation is reduced to the
chief plus the new spacecraft. Objectives are to be minimized.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .astro import (
    EARTH,
    TWO_PI,
    Coe,
    apsides_to_shape,
    coe_to_cartesian,
    mean_to_true_anomaly,
    orbital_period,
    true_to_mean_anomaly,
    wrap_angle,
    wrap_pi,
)
from .dynamics import PropagationError, PropagatorConfig, propagate_samples
from .measurement import RF_ONLY, RF_VISION, NoiseSpec
from .observability import SvMetrics, link_eclipses, mean_local_lui, srsfim, sv_metrics
from .scenarios import CHIEF_ORBIT

OBJECTIVE_KINDS = ("obs_lui", "sfim_lui", "sfim_cn")
PARAMETRIZATIONS = ("coe_fixed_period", "apsis")


class InfeasibleError(RuntimeError):
    """No feasible design was evaluated within the budget."""


@dataclass(frozen=True)
class DesignVector:
    """Initial orbit of the new spacecraft.

    ``coe_fixed_period`` values are ``(e, i, raan, argp, nu)`` with the
    semi-major axis pinned to the chief's; ``apsis`` values are
    ``(r_apo, r_peri, i, raan, argp, nu)`` with the two radii in any order.
    """

    parametrization: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"unknown parametrization {self.parametrization!r}")
        want = 5 if self.parametrization == "coe_fixed_period" else 6
        vals = tuple(float(v) for v in self.values)
        if len(vals) != want:
            raise ValueError(f"{self.parametrization} needs {want} values")
        object.__setattr__(self, "values", vals)

    def shape(self, chief: Coe = CHIEF_ORBIT) -> tuple[float, float]:
        if self.parametrization == "coe_fixed_period":
            return chief.a, self.values[0]
        return apsides_to_shape(self.values[0], self.values[1])

    def to_coe(self, chief: Coe = CHIEF_ORBIT) -> Coe:
        a, e = self.shape(chief)
        i, raan, argp, nu = self.values[-4:]
        return Coe(a, e, i, raan, argp, nu)

    @classmethod
    def from_coe(cls, coe: Coe, parametrization: str = "coe_fixed_period") -> "DesignVector":
        if parametrization == "coe_fixed_period":
            return cls(parametrization, (coe.e, coe.i, coe.raan, coe.argp, coe.nu))
        return cls(parametrization, (coe.a * (1 + coe.e), coe.a * (1 - coe.e), coe.i, coe.raan, coe.argp, coe.nu))


@dataclass(frozen=True)
class ConstraintSet:
    min_perigee: float = 6678.0  # km
    max_ecc: float = 0.85
    d_max: float = 480.0  # km
    r_min: float = 6678.0
    r_max: float = 3e5

    def __post_init__(self):
        if min(self.min_perigee, self.max_ecc, self.d_max, self.r_min, self.r_max) <= 0:
            raise ValueError("constraint limits must be positive")

    def bounds(self, parametrization: str) -> tuple[np.ndarray, np.ndarray]:
        ang_lo, ang_hi = [0.0, 0.0, 0.0, 0.0], [math.pi, TWO_PI, TWO_PI, TWO_PI]
        if parametrization == "coe_fixed_period":
            return np.array([0.0, *ang_lo]), np.array([self.max_ecc, *ang_hi])
        return np.array([self.r_min, self.r_min, *ang_lo]), np.array([self.r_max, self.r_max, *ang_hi])


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "sfim_lui"
    sensor: str = "rf_only"
    sample_period: float = 90.0
    n_samples: int = 1000
    noise: NoiseSpec | None = None
    propagator: PropagatorConfig | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.sensor not in ("rf_vision", "rf_only"):
            raise ValueError(f"unknown sensor {self.sensor!r}")
        if self.n_samples < 1 or not self.sample_period > 0:
            raise ValueError("need a positive sample period and at least one sample")

    @property
    def noise_spec(self) -> NoiseSpec:
        if self.noise is not None:
            return self.noise
        return RF_VISION if self.sensor == "rf_vision" else RF_ONLY

    @property
    def propagator_config(self) -> PropagatorConfig:
        if self.propagator is not None:
            return self.propagator
        if self.kind == "obs_lui":
            # low orbits are unstable at loose tolerances without a step cap
            return PropagatorConfig(max_step=self.sample_period)
        return PropagatorConfig()

    @property
    def parametrization(self) -> str:
        return "apsis" if self.kind == "obs_lui" else "coe_fixed_period"


@dataclass(frozen=True)
class ObjectiveReport:
    objective: float
    metrics: SvMetrics | None
    eclipsed_fraction: float
    singular: bool = False
    failed: bool = False


def _sample_times(spec: ObjectiveSpec, chief: Coe, new: Coe) -> np.ndarray:
    if spec.kind == "obs_lui":
        horizon = max(orbital_period(chief.a), orbital_period(new.a))
        n = max(1, int(math.floor(horizon / spec.sample_period)))
    else:
        n = spec.n_samples
    return np.arange(n) * spec.sample_period


def eval_objective(x: DesignVector, spec: ObjectiveSpec, chief: Coe = CHIEF_ORBIT) -> ObjectiveReport:
    """Objective value of a new-spacecraft placement.

    ``obs_lui`` averages the local observability LUI over one period of the
    slower orbit. The SR-SFIM objectives use the fixed sample grid and are
    scaled by the fraction of unblocked samples. Propagation failures return
    ``+inf``.
    """
    new = x.to_coe(chief)
    c = coe_to_cartesian(chief).as_array()
    d = coe_to_cartesian(new).as_array()
    x0 = np.concatenate([c, d - c])
    times = _sample_times(spec, chief, new)
    with_stm = spec.kind != "obs_lui"
    try:
        states, stms = propagate_samples(x0, times, spec.propagator_config, with_stm=with_stm)
    except (PropagationError, ValueError):
        return ObjectiveReport(math.inf, None, math.nan, failed=True)
    blocked = link_eclipses(states, [(1, 2)])[:, 0]
    frac = float(blocked.mean())
    if spec.kind == "obs_lui":
        try:
            val = mean_local_lui(states, blocked)
        except ValueError:
            return ObjectiveReport(math.inf, None, frac, failed=True)
        return ObjectiveReport(val, None, frac, singular=val == 0.0)
    try:
        info = srsfim(states, stms, times, noise=spec.noise_spec, eclipsed=blocked)
    except ValueError:
        # zero baseline: coincident spacecraft
        return ObjectiveReport(0.0, None, frac, singular=True)
    m = sv_metrics(info.matrix)
    raw = m.lui if spec.kind == "sfim_lui" else m.neg_recip_cn
    return ObjectiveReport(raw * (1.0 - frac), m, frac, singular=m.rank < info.matrix.shape[1])


class CachedObjective:
    """Memoizes objective reports by design vector."""

    def __init__(self, spec: ObjectiveSpec, chief: Coe = CHIEF_ORBIT):
        self.spec = spec
        self.chief = chief
        self._cache: dict[DesignVector, ObjectiveReport] = {}

    def __call__(self, x: DesignVector) -> ObjectiveReport:
        rep = self._cache.get(x)
        if rep is None:
            rep = eval_objective(x, self.spec, self.chief)
            self._cache[x] = rep
        return rep


# --- constraints --------------------------------------------------------------


def _phase(coe: Coe) -> float:
    return coe.argp + true_to_mean_anomaly(coe.nu, coe.e) + coe.raan


def vision_constraint(x: DesignVector | Coe, chief: Coe = CHIEF_ORBIT, d_max: float = 480.0) -> float:
    """Approximate worst-case separation minus ``d_max`` (km); <= 0 is feasible.

    Assumes equal semi-major axes. The phase difference is wrapped to
    (-pi, pi] before taking its magnitude.
    """
    new = x.to_coe(chief) if isinstance(x, DesignVector) else x
    dphase = abs(wrap_pi(_phase(new) - _phase(chief)))
    return chief.a * math.hypot(dphase + 2.0 * new.e, new.i - chief.i) - d_max


def hcw_relative(x: DesignVector | Coe, chief: Coe, t: float, c=EARTH) -> np.ndarray:
    """Linearized LVLH offset (radial, along-track, cross-track) in km at time ``t``.

    Valid for a circular equatorial chief and equal periods.
    """
    new = x.to_coe(chief) if isinstance(x, DesignVector) else x
    a = chief.a
    n = TWO_PI / orbital_period(a, c)
    m1 = true_to_mean_anomaly(chief.nu, chief.e) + n * t
    m2 = true_to_mean_anomaly(new.nu, new.e) + n * t
    u = chief.argp + m1 - new.argp
    dx = -a * new.e * math.cos(u)
    dy = a * (wrap_pi(new.argp + m2 - chief.argp - m1 + new.raan - chief.raan) + 2.0 * new.e * math.sin(u))
    dz = a * new.i * math.sin(chief.argp + m1)
    return np.array([dx, dy, dz])


def constraint_violations(x: DesignVector, cs: ConstraintSet, sensor: str, chief: Coe = CHIEF_ORBIT) -> dict[str, float]:
    """Positive amount by which each violated constraint is exceeded."""
    out: dict[str, float] = {}
    lo, hi = cs.bounds(x.parametrization)
    v = np.array(x.values)
    for k, name in enumerate(_names(x.parametrization)):
        if name in ("raan", "argp", "nu"):
            continue  # angles wrap
        over = max(lo[k] - v[k], v[k] - hi[k], 0.0)
        if over > 0:
            out[f"bound:{name}"] = over
    a, e = x.shape(chief)
    if x.parametrization == "coe_fixed_period" and e > cs.max_ecc:
        out["eccentricity"] = e - cs.max_ecc
    if e < 0 or e >= 1:
        out["eccentricity"] = abs(e)
        return out
    perigee = a * (1 - e)
    if perigee < cs.min_perigee:
        out["perigee"] = cs.min_perigee - perigee
    if sensor == "rf_vision" and x.parametrization == "coe_fixed_period":
        slack = vision_constraint(x, chief, cs.d_max)
        if slack > 0:
            out["vision_range"] = slack
    return out


def feasible(x: DesignVector, cs: ConstraintSet = ConstraintSet(), sensor: str = "rf_only", chief: Coe = CHIEF_ORBIT):
    """Returns ``(ok, violated_constraint_names)``."""
    viol = constraint_violations(x, cs, sensor, chief)
    return not viol, sorted(viol)


def _names(parametrization: str) -> tuple[str, ...]:
    if parametrization == "coe_fixed_period":
        return ("e", "i", "raan", "argp", "nu")
    return ("r_apo", "r_peri", "i", "raan", "argp", "nu")


# --- solvers ------------------------------------------------------------------


@dataclass
class TraceEntry:
    eval_id: int
    x: np.ndarray
    objective: float
    feasible: bool


@dataclass
class OptimizeResult:
    x: np.ndarray
    objective: float
    trace: list[TraceEntry] = field(default_factory=list)
    design: DesignVector | None = None
    report: ObjectiveReport | None = None

    @property
    def best_so_far(self) -> np.ndarray:
        vals = [t.objective if t.feasible else math.inf for t in self.trace]
        return np.minimum.accumulate(vals)

    def write_trace(self, path, names: Sequence[str] | None = None) -> None:
        d = self.x.size
        names = list(names or [f"x{k}" for k in range(d)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval_id", *names, "objective", "feasible"])
            for t in self.trace:
                w.writerow([t.eval_id, *[repr(float(v)) for v in t.x], repr(float(t.objective)), int(t.feasible)])


class _BudgetExhausted(Exception):
    pass


class _Evaluator:
    """Counts evaluations against a budget and records the audit trace."""

    def __init__(self, fun, violation, budget):
        self.fun = fun
        self.violation = violation
        self.budget = budget
        self.trace: list[TraceEntry] = []
        self.best_x = None
        self.best_f = math.inf

    def __call__(self, x) -> tuple[float, float]:
        if len(self.trace) >= self.budget:
            raise _BudgetExhausted
        x = np.array(x, dtype=float)
        f = float(self.fun(x))
        viol = float(self.violation(x))
        ok = viol <= 0.0 and math.isfinite(f)
        self.trace.append(TraceEntry(len(self.trace), x, f, ok))
        if ok and f < self.best_f:
            self.best_f, self.best_x = f, x
        return f, viol

    def evaluate_many(self, xs, pool=None) -> list[tuple[float, float]]:
        xs = [np.array(x, dtype=float) for x in xs[: max(0, self.budget - len(self.trace))]]
        if pool is None:
            fs = [float(self.fun(x)) for x in xs]
        else:
            fs = [float(f) for f in pool.map(self.fun, xs)]
        out = []
        for x, f in zip(xs, fs):
            viol = float(self.violation(x))
            ok = viol <= 0.0 and math.isfinite(f)
            self.trace.append(TraceEntry(len(self.trace), x, f, ok))
            if ok and f < self.best_f:
                self.best_f, self.best_x = f, x
            out.append((f, viol))
        return out


def minimize_box(
    fun: Callable[[np.ndarray], float],
    lower,
    upper,
    violation: Callable[[np.ndarray], float] | None = None,
    solver: str = "multistart_local",
    budget: int = 2000,
    seed: int = 0,
    x0=None,
    workers: int = 1,
) -> OptimizeResult:
    """Minimize ``fun`` over a box subject to ``violation(x) <= 0``.

    ``multistart_local`` runs Nelder-Mead restarts in the box with a penalty
    on constraint violation; ``swarm`` is a particle swarm whose infeasible
    particles are pulled back towards the best feasible point. Both stop
    after ``budget`` objective evaluations and are deterministic for a seed.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    viol_fn = violation or (lambda x: 0.0)
    ev = _Evaluator(fun, viol_fn, budget)
    rng = np.random.default_rng(seed)
    if solver == "multistart_local":
        _multistart(ev, lo, hi, rng, x0)
    elif solver == "swarm":
        _swarm(ev, lo, hi, rng, x0, workers)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    if ev.best_x is None:
        raise InfeasibleError(f"no feasible point among {len(ev.trace)} evaluations")
    return OptimizeResult(ev.best_x, ev.best_f, ev.trace)


def _multistart(ev: _Evaluator, lo, hi, rng, x0):
    span = hi - lo
    weight = 1.0
    start, scale = None, None
    polish = 0
    try:
        if x0 is not None:
            x0 = np.asarray(x0, dtype=float)
            ev(x0)
            start = (x0 - lo) / span
        while True:
            if start is None:
                start = rng.random(lo.size)
            had_feasible = ev.best_x is not None

            def penalized(u):
                x = lo + np.clip(u, 0.0, 1.0) * span
                f, viol = ev(x)
                if not math.isfinite(f):
                    return 1e300
                # out-of-box excursions are clipped, but still penalized so the simplex returns
                out = float(np.sum(np.abs(u - np.clip(u, 0.0, 1.0))))
                if viol > 0 or out > 0:
                    return f + weight * (1e3 * abs(f) + 1.0) * (max(viol, 0.0) + out)
                return f

            options = {"maxfev": 200 * lo.size, "xatol": 1e-6, "fatol": 1e-12, "adaptive": lo.size > 3}
            if scale is not None:
                options["initial_simplex"] = _simplex(start, scale, rng)
            res = minimize(penalized, start, method="Nelder-Mead", options=options)
            if ev.best_x is None or (had_feasible and not _is_feasible(ev, res.x, lo, span)):
                weight *= 2.0  # stagnating in the infeasible region
            # alternate global restarts with shrinking restarts around the incumbent,
            # which lets the simplex slide along active constraints
            if ev.best_x is not None and scale is None:
                polish += 1
                start, scale = (ev.best_x - lo) / span, 0.1 * 0.5 ** (polish % 8)
            else:
                start, scale = None, None
    except _BudgetExhausted:
        return


def _simplex(center, scale, rng):
    d = center.size
    # random orientation so repeated polishing does not retrace the same moves
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return np.vstack([center, center + scale * q.T])


def _is_feasible(ev, u, lo, span) -> bool:
    return ev.violation(lo + np.clip(u, 0.0, 1.0) * span) <= 0


def _swarm(ev: _Evaluator, lo, hi, rng, x0, workers, n_particles: int = 24, inertia=(0.9, 0.4), c1=1.49, c2=1.49):
    span = hi - lo
    d = lo.size
    pos = rng.random((n_particles, d))
    if x0 is not None:
        pos[0] = np.clip((np.asarray(x0, dtype=float) - lo) / span, 0, 1)
    vel = (rng.random((n_particles, d)) - 0.5) * 0.2
    pbest = pos.copy()
    pbest_f = np.full(n_particles, math.inf)
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    prev = None
    try:
        while len(ev.trace) < ev.budget:
            pos = _repair(ev, pos, prev, lo, span)
            prev = pos.copy()
            results = ev.evaluate_many(list(lo + pos * span), pool)
            for k, (f, viol) in enumerate(results):
                score = f if viol <= 0 and math.isfinite(f) else math.inf
                if score < pbest_f[k]:
                    pbest_f[k], pbest[k] = score, pos[k]
            if len(results) < n_particles:
                break
            g = pbest[int(np.argmin(pbest_f))] if np.isfinite(pbest_f).any() else pos[0]
            r1, r2 = rng.random((n_particles, d)), rng.random((n_particles, d))
            # inertia decays linearly over the budget, trading exploration for convergence
            w = inertia[0] + (inertia[1] - inertia[0]) * len(ev.trace) / ev.budget
            vel = w * vel + c1 * r1 * (pbest - pos) + c2 * r2 * (g - pos)
            pos = np.clip(pos + vel, 0.0, 1.0)
            vel = np.where((pos == 0.0) | (pos == 1.0), -0.5 * vel, vel)
    finally:
        if pool is not None:
            pool.shutdown()


def _repair(ev: _Evaluator, pos, prev, lo, span, steps: int = 30):
    """Pull each infeasible particle back along its last move to the feasible edge.

    Particles without a feasible previous position bisect towards the best
    feasible point instead.
    """
    if ev.best_x is None:
        return pos
    best = (ev.best_x - lo) / span
    out = pos.copy()
    for k in range(pos.shape[0]):
        if ev.violation(lo + pos[k] * span) <= 0:
            continue
        anchor = prev[k] if prev is not None and ev.violation(lo + prev[k] * span) <= 0 else best
        a, b = 0.0, 1.0  # fraction of the way from the anchor to the particle
        for _ in range(steps):
            mid = 0.5 * (a + b)
            if ev.violation(lo + (anchor + mid * (pos[k] - anchor)) * span) <= 0:
                a = mid
            else:
                b = mid
        out[k] = anchor + a * (pos[k] - anchor)
    return out


def optimize(
    spec: ObjectiveSpec,
    cs: ConstraintSet = ConstraintSet(),
    solver: str = "multistart_local",
    budget: int = 2000,
    seed: int = 0,
    x0: DesignVector | None = None,
    chief: Coe = CHIEF_ORBIT,
    workers: int = 1,
) -> OptimizeResult:
    """Search for the best feasible new-spacecraft orbit for ``spec``."""
    param = spec.parametrization
    lo, hi = cs.bounds(param)
    objective = CachedObjective(spec, chief)

    def fun(v):
        return objective(DesignVector(param, tuple(v))).objective

    def violation(v):
        return sum(constraint_violations(DesignVector(param, tuple(v)), cs, spec.sensor, chief).values())

    start = None if x0 is None else np.array(x0.values)
    res = minimize_box(fun, lo, hi, violation, solver, budget, seed, start, workers)
    res.design = DesignVector(param, tuple(res.x))
    res.report = objective(res.design)
    return res


def random_feasible(
    cs: ConstraintSet, spec: ObjectiveSpec, n: int, seed: int = 0, chief: Coe = CHIEF_ORBIT, max_draws: int = 1_000_000
) -> list[DesignVector]:
    """Random feasible designs by rejection sampling.

    Draws are uniform over the box, except with the vision-range constraint
    active: there the eccentricity, inclination and phase are drawn uniformly
    inside the region that constraint bounds (the box is almost entirely
    infeasible), with the mean anomaly fixed by the drawn phase.
    """
    rng = np.random.default_rng(seed)
    param = spec.parametrization
    lo, hi = cs.bounds(param)
    vision = spec.sensor == "rf_vision" and param == "coe_fixed_period"
    out: list[DesignVector] = []
    for _ in range(max_draws):
        if len(out) >= n:
            break
        v = lo + rng.random(lo.size) * (hi - lo)
        if vision:
            reach = cs.d_max / chief.a
            e = rng.uniform(0.0, min(cs.max_ecc, 0.5 * reach))
            i = rng.uniform(max(0.0, chief.i - reach), min(math.pi, chief.i + reach))
            raan, argp = v[2], v[3]
            m = _phase(chief) + rng.uniform(-reach, reach) - raan - argp
            v = np.array([e, i, raan, argp, wrap_angle(mean_to_true_anomaly(wrap_angle(m), e))])
        x = DesignVector(param, tuple(v))
        if feasible(x, cs, spec.sensor, chief)[0]:
            out.append(x)
    if len(out) >= n:
        return out
    raise InfeasibleError(f"only {len(out)} of {n} feasible designs in {max_draws} draws")
