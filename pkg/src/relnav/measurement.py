"""Inter-spacecraft range/bearing measurements and crosslink schedules.

Spacecraft are identified by 1-based ids, id 1 being the chief. A pair
``(a, b)`` measures spacecraft ``b`` as seen from spacecraft ``a``, i.e. the
relative position ``r_b - r_a`` in inertial axes.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .astro import EARTH, wrap_pi

ARCSEC = math.pi / (180.0 * 3600.0)
RANGE_ONLY = "range_only"
RANGE_AND_BEARING = "range_and_bearing"
_MODES = (RANGE_ONLY, RANGE_AND_BEARING)

Pair = tuple[int, int]


class SingularGeometryError(ValueError):
    """Relative geometry for which a measurement or its derivative is undefined."""


@dataclass(frozen=True)
class Measurement:
    pair: Pair
    epoch: float
    range: float | None = None
    ra: float | None = None
    dec: float | None = None

    def __post_init__(self):
        if self.range is None and self.ra is None and self.dec is None:
            raise ValueError("measurement carries no observable")
        if self.range is not None and not self.range > 0:
            raise ValueError("range must be positive")
        if self.dec is not None and abs(self.dec) > math.pi / 2:
            raise ValueError("declination out of [-pi/2, pi/2]")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_range: float  # km
    sigma_ra: float  # rad
    sigma_dec: float  # rad

    def __post_init__(self):
        if min(self.sigma_range, self.sigma_ra, self.sigma_dec) < 0:
            raise ValueError("noise sigmas must be non-negative")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_range, self.sigma_ra, self.sigma_dec])


RF_VISION = NoiseSpec(1e-3 / 3.0, 35 * ARCSEC, 35 * ARCSEC)
RF_ONLY = NoiseSpec(1e-3 / 3.0, math.radians(1.0), math.radians(1.0))
NOISELESS = NoiseSpec(0.0, 0.0, 0.0)


def ideal_measurement(dr) -> tuple[float, float, float]:
    """Range, right ascension and declination of a relative position."""
    dr = np.asarray(dr, dtype=float)
    rho = float(np.linalg.norm(dr))
    if not rho > 0:
        raise SingularGeometryError("zero baseline between spacecraft")
    if dr[0] == 0.0 and dr[1] == 0.0:
        psi = 0.0
    else:
        psi = math.atan2(dr[1], dr[0])
    theta = math.asin(max(-1.0, min(1.0, dr[2] / rho)))
    return rho, psi, theta


def measurement_jacobian(dr, mode: str = RANGE_AND_BEARING, strict: bool = False):
    """Partials of (range, ra, dec) with respect to the relative position.

    Returns ``(rows, components)`` where ``components`` lists which of
    ``"range"``, ``"ra"``, ``"dec"`` the rows correspond to. When the baseline is
    along the z axis the right-ascension row is undefined: it is dropped, or
    :class:`SingularGeometryError` is raised if ``strict``.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown measurement mode {mode!r}")
    dr = np.asarray(dr, dtype=float)
    rho2 = float(dr @ dr)
    rho = math.sqrt(rho2)
    if not rho > 0:
        raise SingularGeometryError("zero baseline between spacecraft")
    rows = [dr / rho]
    comps = ["range"]
    if mode == RANGE_AND_BEARING:
        rxy2 = dr[0] ** 2 + dr[1] ** 2
        rxy = math.sqrt(rxy2)
        if rxy > 1e-9 * rho:
            rows.append(np.array([-dr[1] / rxy2, dr[0] / rxy2, 0.0]))
            comps.append("ra")
        elif strict:
            raise SingularGeometryError("right ascension undefined on the z axis")
        # exactly on the pole the declination partial has no direction either
        if rxy > 0:
            rows.append(np.array([-dr[0] * dr[2], -dr[1] * dr[2], rxy2]) / (rho2 * rxy))
            comps.append("dec")
    return np.array(rows), tuple(comps)


def is_eclipsed(r_observer, r_target, body_radius: float = EARTH.r_earth) -> bool:
    """True when the Earth blocks the line of sight between two spacecraft."""
    a = np.asarray(r_observer, dtype=float)
    d = np.asarray(r_target, dtype=float) - a
    dd = float(d @ d)
    if dd == 0.0:
        return False
    t = -float(a @ d) / dd
    if not 0.0 < t < 1.0:
        return False
    return float(np.linalg.norm(a + t * d)) < body_radius


def eclipsed_mask(r_observer, r_target, body_radius: float = EARTH.r_earth) -> np.ndarray:
    """Vectorized :func:`is_eclipsed` over arrays of shape (K, 3)."""
    a = np.atleast_2d(r_observer)
    d = np.atleast_2d(r_target) - a
    dd = np.einsum("ij,ij->i", d, d)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = -np.einsum("ij,ij->i", a, d) / dd
    closest = a + np.nan_to_num(t)[:, None] * d
    interior = (t > 0.0) & (t < 1.0) & (dd > 0)
    return interior & (np.linalg.norm(closest, axis=1) < body_radius)


# --- schedules ----------------------------------------------------------------

ORIGINAL_SLOTS: tuple[tuple[Pair, ...], ...] = (
    ((1, 2), (3, 4), (5, 6)),
    ((1, 3), (2, 5), (4, 6)),
    ((1, 4), (2, 6), (3, 5)),
    ((1, 5), (2, 4), (3, 6)),
    ((1, 6), (2, 3), (4, 5)),
)

ADAPTED7_SLOTS: tuple[tuple[Pair, ...], ...] = (
    ((1, 2), (3, 4), (5, 6)),
    ((1, 3), (2, 4), (5, 7)),
    ((1, 4), (2, 7), (3, 6)),
    ((1, 5), (2, 6), (3, 7)),
    ((1, 6), (2, 5), (4, 7)),
    ((1, 7), (3, 5), (4, 6)),
    ((2, 3), (4, 5), (6, 7)),
)

SLOT_SPACING = 600.0  # s between consecutive slot starts
SLOT_OFFSET = 540.0  # first slot opens 9 min into each cycle
SLOT_LENGTH = 60.0
SCHEDULE_KINDS = ("original", "adapted7", "parallel7", "fixed_period")


@dataclass(frozen=True)
class Window:
    start: float
    end: float
    pairs: tuple[Pair, ...]


@dataclass(frozen=True)
class Schedule:
    kind: str
    windows: tuple[Window, ...]
    cadence: float = 1.0

    def epochs(self) -> Iterator[tuple[float, tuple[Pair, ...]]]:
        """Observation epochs in time order with the pairs active at each."""
        for w in self.windows:
            t = w.start
            while t < w.end - 1e-9:
                yield t, w.pairs
                t += self.cadence

    def pairs(self) -> set[Pair]:
        return {p for w in self.windows for p in w.pairs}

    def spacecraft(self) -> set[int]:
        return {s for p in self.pairs() for s in p}


def _cyclic(slots, t0, horizon, extra: tuple[Pair, ...] = ()) -> list[Window]:
    period = SLOT_SPACING * len(slots)
    windows = []
    k = 0
    while True:
        base = t0 + k * period
        added = False
        for s, pairs in enumerate(slots):
            start = base + SLOT_OFFSET + s * SLOT_SPACING
            end = start + SLOT_LENGTH
            if end > t0 + horizon + 1e-9:
                return windows
            windows.append(Window(start, end, tuple(pairs) + extra))
            added = True
        if not added:
            return windows
        k += 1


def build_schedule(
    kind: str,
    t0: float = 0.0,
    horizon: float = 3000.0,
    pairs: tuple[Pair, ...] | None = None,
    period: float = 90.0,
) -> Schedule:
    """Expand a cyclic crosslink table into concrete observation windows.

    ``original`` is the 6-spacecraft 50-minute cycle, ``adapted7`` the
    7-spacecraft 70-minute cycle, ``parallel7`` the original cycle with the
    chief-to-spacecraft-7 link active during every slot, and ``fixed_period``
    observes ``pairs`` (default ``(1, 2)``) once every ``period`` seconds.
    """
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if kind == "fixed_period":
        if not period > 0:
            raise ValueError("period must be positive")
        pairs = tuple(pairs) if pairs else ((1, 2),)
        n = int(math.floor(horizon / period + 1e-9))
        windows = tuple(Window(t0 + k * period, t0 + k * period + 1e-6, pairs) for k in range(n))
        return Schedule(kind, windows, cadence=period)
    slots = ADAPTED7_SLOTS if kind == "adapted7" else ORIGINAL_SLOTS
    cycle = SLOT_SPACING * len(slots)
    if horizon < cycle:
        raise ValueError(f"horizon must cover one {cycle / 60:.0f}-minute cycle")
    extra = ((1, 7),) if kind == "parallel7" else ()
    return Schedule(kind, tuple(_cyclic(slots, t0, horizon, extra)), cadence=1.0)


# --- synthesis ----------------------------------------------------------------


@dataclass
class MeasurementSet:
    """Column-oriented measurement stream sorted by epoch.

    Absent components are NaN.
    """

    epoch: np.ndarray
    sc_a: np.ndarray
    sc_b: np.ndarray
    range: np.ndarray
    ra: np.ndarray
    dec: np.ndarray

    def __len__(self) -> int:
        return int(self.epoch.size)

    def __iter__(self) -> Iterator[Measurement]:
        def opt(x):
            return None if math.isnan(x) else float(x)

        for k in range(len(self)):
            yield Measurement(
                (int(self.sc_a[k]), int(self.sc_b[k])),
                float(self.epoch[k]),
                opt(self.range[k]),
                opt(self.ra[k]),
                opt(self.dec[k]),
            )

    @property
    def values(self) -> np.ndarray:
        return np.column_stack([self.range, self.ra, self.dec])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch_s", "sc_a", "sc_b", "range_km", "ra_rad", "dec_rad"])
            for k in range(len(self)):
                vals = ["" if math.isnan(v) else repr(float(v)) for v in (self.range[k], self.ra[k], self.dec[k])]
                w.writerow([repr(float(self.epoch[k])), int(self.sc_a[k]), int(self.sc_b[k]), *vals])

    @classmethod
    def from_csv(cls, path) -> "MeasurementSet":
        cols: dict[str, list] = {k: [] for k in ("epoch", "a", "b", "range", "ra", "dec")}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                cols["epoch"].append(float(row["epoch_s"]))
                cols["a"].append(int(row["sc_a"]))
                cols["b"].append(int(row["sc_b"]))
                for key, col in (("range", "range_km"), ("ra", "ra_rad"), ("dec", "dec_rad")):
                    cols[key].append(float(row[col]) if row[col] != "" else math.nan)
        return cls(
            np.array(cols["epoch"]),
            np.array(cols["a"], dtype=int),
            np.array(cols["b"], dtype=int),
            np.array(cols["range"]),
            np.array(cols["ra"]),
            np.array(cols["dec"]),
        )

    @classmethod
    def from_measurements(cls, meas) -> "MeasurementSet":
        meas = sorted(meas, key=lambda m: m.epoch)
        nan = math.nan
        return cls(
            np.array([m.epoch for m in meas], dtype=float),
            np.array([m.pair[0] for m in meas], dtype=int),
            np.array([m.pair[1] for m in meas], dtype=int),
            np.array([nan if m.range is None else m.range for m in meas], dtype=float),
            np.array([nan if m.ra is None else m.ra for m in meas], dtype=float),
            np.array([nan if m.dec is None else m.dec for m in meas], dtype=float),
        )


@dataclass(frozen=True)
class TruthTrajectory:
    """Absolute states of every spacecraft sampled on a time grid.

    ``states[k, s - 1]`` is the ECI state of spacecraft id ``s`` at ``times[k]``.
    """

    times: np.ndarray
    states: np.ndarray = field(repr=False)

    def index_of(self, epochs) -> np.ndarray:
        epochs = np.asarray(epochs, dtype=float)
        idx = np.searchsorted(self.times, epochs - 1e-6)
        idx = np.clip(idx, 0, self.times.size - 1)
        if epochs.size and np.any(np.abs(self.times[idx] - epochs) > 1e-6):
            raise ValueError("truth trajectory does not cover the requested epochs")
        return idx


def synthesize_measurements(
    truth: TruthTrajectory,
    schedule: Schedule,
    modes: Mapping[Pair, str] | None = None,
    noise: NoiseSpec = RF_VISION,
    seed: int | np.random.Generator | None = 0,
    body_radius: float = EARTH.r_earth,
    pair_noise: Mapping[Pair, NoiseSpec] | None = None,
) -> MeasurementSet:
    """Truth-plus-noise measurements on the schedule's epochs.

    Pairs whose line of sight is blocked by the Earth produce nothing.
    ``modes`` maps pairs to :data:`RANGE_ONLY` or :data:`RANGE_AND_BEARING`
    (the default for unlisted pairs). ``pair_noise`` overrides ``noise`` for
    the listed pairs.
    """
    modes = dict(modes or {})
    pair_noise = dict(pair_noise or {})
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ep, aa, bb = [], [], []
    for t, pairs in schedule.epochs():
        for a, b in pairs:
            ep.append(t)
            aa.append(a)
            bb.append(b)
    ep = np.array(ep, dtype=float)
    aa = np.array(aa, dtype=int)
    bb = np.array(bb, dtype=int)
    if ep.size == 0:
        return MeasurementSet(ep, aa, bb, ep.copy(), ep.copy(), ep.copy())
    n_sc = truth.states.shape[1]
    if aa.max() > n_sc or bb.max() > n_sc:
        raise ValueError("schedule references a spacecraft missing from the truth trajectory")
    k = truth.index_of(ep)
    ra_pos = truth.states[k, aa - 1, :3]
    rb_pos = truth.states[k, bb - 1, :3]
    visible = ~eclipsed_mask(ra_pos, rb_pos, body_radius)
    dr = rb_pos - ra_pos
    rho = np.linalg.norm(dr, axis=1)
    if np.any(rho <= 0):
        raise SingularGeometryError("zero baseline between spacecraft")
    psi = np.where((dr[:, 0] == 0) & (dr[:, 1] == 0), 0.0, np.arctan2(dr[:, 1], dr[:, 0]))
    theta = np.arcsin(np.clip(dr[:, 2] / rho, -1.0, 1.0))
    # draw for every scheduled slot so streams do not depend on visibility
    sig = np.array([pair_noise.get((int(a), int(b)), noise).sigmas for a, b in zip(aa, bb)])
    eps = rng.standard_normal((ep.size, 3)) * sig
    rng_m = rho + eps[:, 0]
    ra_m = wrap_pi(psi + eps[:, 1])
    dec_m = np.clip(theta + eps[:, 2], -math.pi / 2, math.pi / 2)
    bearing = np.array([modes.get((int(a), int(b)), RANGE_AND_BEARING) == RANGE_AND_BEARING for a, b in zip(aa, bb)])
    ra_m = np.where(bearing, ra_m, np.nan)
    dec_m = np.where(bearing, dec_m, np.nan)
    v = visible
    return MeasurementSet(ep[v], aa[v], bb[v], rng_m[v], np.asarray(ra_m)[v], dec_m[v])


def all_pairs(n_spacecraft: int) -> list[Pair]:
    return list(itertools.combinations(range(1, n_spacecraft + 1), 2))
