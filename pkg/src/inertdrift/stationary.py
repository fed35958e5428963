"""Binned occupation measures on (H, V) space and the two estimators of the
invariant law: renewal-reward (sum of cycle occupations over sum of cycle
lengths) and plain time averages along one long path."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import ModelParams, SystemState
from .rng import NoiseSource


@dataclass(frozen=True)
class Binning:
    """Uniform nh x nv grid on [0, h_max] x [v_min, v_max]."""

    h_max: float
    v_min: float
    v_max: float
    nh: int = 200
    nv: int = 200

    def __post_init__(self):
        if not (self.h_max > 0 and self.v_max > self.v_min and self.nh >= 1 and self.nv >= 1):
            raise ValueError(f"invalid binning {self}")

    @property
    def h_edges(self):
        return np.linspace(0.0, self.h_max, self.nh + 1)

    @property
    def v_edges(self):
        return np.linspace(self.v_min, self.v_max, self.nv + 1)

    def kernel_spec(self):
        return np.array([0.0, self.h_max, self.nh / self.h_max,
                         self.v_min, self.v_max, self.nv / (self.v_max - self.v_min)])


@dataclass(frozen=True)
class LineBinning:
    """Fine uniform 1-D grid used for marginal tail curves."""

    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not (self.hi > self.lo and self.n >= 1):
            raise ValueError(f"invalid line binning {self}")

    @property
    def edges(self):
        return np.linspace(self.lo, self.hi, self.n + 1)

    def kernel_spec(self):
        return np.array([self.lo, self.hi, self.n / (self.hi - self.lo)])


@dataclass(frozen=True)
class BinningSet:
    """Bulk grid plus the fine velocity and gap marginals gathered alongside."""

    bulk: Binning
    v_line: LineBinning
    h_line: LineBinning

    @classmethod
    def default(cls, params: ModelParams, bulk: Binning | None = None, n_line: int = 8000):
        rv = params.renewal_v
        spread = 1.0 / math.sqrt(2.0 * (1.0 + params.gamma))
        v_lo = params.velocity_floor if not params.gamma_zero_mode else rv - 14 * spread
        v_line = LineBinning(v_lo, rv + 14 * spread, n_line)
        h_scale = params.gamma / params.g if not params.gamma_zero_mode else 1.0 / params.g
        h_line = LineBinning(0.0, 40.0 * max(h_scale, 0.25), n_line)
        if bulk is None:
            bulk = Binning(6.0 * max(h_scale, 0.25), v_lo, rv + 6 * spread)
        return cls(bulk, v_line, h_line)

    def as_dict(self):
        b = self.bulk
        return {"h_max": b.h_max, "v_min": b.v_min, "v_max": b.v_max, "nh": b.nh, "nv": b.nv,
                "v_line": [self.v_line.lo, self.v_line.hi, self.v_line.n],
                "h_line": [self.h_line.lo, self.h_line.hi, self.h_line.n]}


@dataclass
class EmpiricalMeasure:
    """Binned measure; ``mass`` is (nh, nv), ``overflow`` collects the rest."""

    h_edges: np.ndarray
    v_edges: np.ndarray
    mass: np.ndarray
    overflow: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, float)
        if self.mass.shape != (len(self.h_edges) - 1, len(self.v_edges) - 1):
            raise ValueError("mass shape does not match the edges")
        if np.any(self.mass < 0) or self.overflow < 0:
            raise ValueError("measure entries must be nonnegative")

    @property
    def total(self) -> float:
        return float(self.mass.sum() + self.overflow)

    def normalized(self) -> "EmpiricalMeasure":
        tot = self.total
        if not tot > 0:
            raise ValueError("empty-measure")
        return EmpiricalMeasure(self.h_edges, self.v_edges, self.mass / tot,
                                self.overflow / tot, dict(self.meta))

    def same_grid(self, other) -> bool:
        return (self.mass.shape == other.mass.shape
                and np.array_equal(self.h_edges, other.h_edges)
                and np.array_equal(self.v_edges, other.v_edges))

    def __add__(self, other):
        if not self.same_grid(other):
            raise ValueError("binning mismatch")
        return EmpiricalMeasure(self.h_edges, self.v_edges, self.mass + other.mass,
                                self.overflow + other.overflow, dict(self.meta))

    def prob(self, h_range=(0.0, np.inf), v_range=(-np.inf, np.inf)) -> float:
        """Mass of the bins whose centers fall in the given box."""
        hc = 0.5 * (self.h_edges[1:] + self.h_edges[:-1])
        vc = 0.5 * (self.v_edges[1:] + self.v_edges[:-1])
        hi = (hc >= h_range[0]) & (hc < h_range[1])
        vi = (vc >= v_range[0]) & (vc < v_range[1])
        return float(self.mass[np.ix_(hi, vi)].sum())

    def mean(self, axis: str) -> float:
        """Mean of h or v over the binned part (bin centers)."""
        m = self.mass / self.mass.sum()
        if axis == "h":
            c = 0.5 * (self.h_edges[1:] + self.h_edges[:-1])
            return float(m.sum(axis=1) @ c)
        c = 0.5 * (self.v_edges[1:] + self.v_edges[:-1])
        return float(m.sum(axis=0) @ c)

    def to_csv(self, path) -> None:
        """Bin rectangle per row, with a JSON metadata comment on top."""
        H0, V0 = np.meshgrid(self.h_edges[:-1], self.v_edges[:-1], indexing="ij")
        H1, V1 = np.meshgrid(self.h_edges[1:], self.v_edges[1:], indexing="ij")
        rows = np.column_stack([H0.ravel(), H1.ravel(), V0.ravel(), V1.ravel(), self.mass.ravel()])
        meta = dict(self.meta, overflow=self.overflow, nh=len(self.h_edges) - 1,
                    nv=len(self.v_edges) - 1)
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            fh.write("h_lo,h_hi,v_lo,v_hi,mass\n")
            np.savetxt(fh, rows, fmt="%.17g", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "EmpiricalMeasure":
        with open(path) as fh:
            meta = json.loads(fh.readline()[2:])
        rows = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        nh, nv = meta.pop("nh"), meta.pop("nv")
        overflow = meta.pop("overflow")
        h_edges = np.append(rows[::nv, 0], rows[-1, 1])
        v_edges = np.append(rows[:nv, 2], rows[nv - 1, 3])
        return cls(h_edges, v_edges, rows[:, 4].reshape(nh, nv), overflow, meta)


def tv_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Half L1 distance over bins plus the overflow discrepancy.

    This is the supremum over unions of bins, hence a lower bound on the
    total variation distance of the underlying continuous laws.
    """
    if not mu.same_grid(nu):
        raise ValueError("binning mismatch")
    a, b = mu.normalized(), nu.normalized()
    return float(0.5 * (np.abs(a.mass - b.mass).sum() + abs(a.overflow - b.overflow)))


@dataclass
class Occupation:
    """Occupation time split into groups (independent blocks of cycles or of
    time) for every binning of a ``BinningSet``.

    Each array has one row per group; columns are the kernel slots (bulk:
    nh*nv bins then overflow; lines: underflow, n bins, overflow).
    """

    binset: BinningSet
    bulk: np.ndarray
    v_line: np.ndarray
    h_line: np.ndarray

    @classmethod
    def zeros(cls, binset: BinningSet, n_groups: int, spare: int = 0):
        b = binset.bulk
        return cls(binset, np.zeros((n_groups + spare, b.nh * b.nv + 1)),
                   np.zeros((n_groups + spare, binset.v_line.n + 2)),
                   np.zeros((n_groups + spare, binset.h_line.n + 2)))

    @property
    def n_groups(self) -> int:
        return self.bulk.shape[0]

    def drop_spare(self, n_groups: int) -> "Occupation":
        return Occupation(self.binset, self.bulk[:n_groups].copy(),
                          self.v_line[:n_groups].copy(), self.h_line[:n_groups].copy())

    def merge(self, other: "Occupation") -> "Occupation":
        if self.binset != other.binset or self.n_groups != other.n_groups:
            raise ValueError("binning mismatch")
        return Occupation(self.binset, self.bulk + other.bulk,
                          self.v_line + other.v_line, self.h_line + other.h_line)

    def group_mass(self) -> np.ndarray:
        return self.bulk.sum(axis=1)

    def measure(self, groups=None, meta=None) -> EmpiricalMeasure:
        """Unnormalized bulk measure of the selected groups (all by default)."""
        rows = self.bulk if groups is None else self.bulk[groups]
        tot = rows.sum(axis=0)
        b = self.binset.bulk
        return EmpiricalMeasure(b.h_edges, b.v_edges, tot[:-1].reshape(b.nh, b.nv),
                                float(max(tot[-1], 0.0)), dict(meta or {}))

    def survival(self, axis: str, groups=None):
        """Edges y and normalized mass above each edge, P(axis > y)."""
        line = self.binset.v_line if axis == "v" else self.binset.h_line
        arr = self.v_line if axis == "v" else self.h_line
        rows = arr if groups is None else arr[groups]
        m = rows.sum(axis=0)
        # mass strictly above edge i = bins i.. plus overflow
        above = np.cumsum(m[::-1])[::-1][1:]
        return line.edges, above / m.sum()


def _check_overflow(meas: EmpiricalMeasure) -> EmpiricalMeasure:
    frac = meas.overflow / meas.total
    if frac > 0.10:
        raise ValueError(f"overflow fraction {frac:.3f} exceeds 10%: binning too narrow")
    meas.meta["overflow_fraction"] = frac
    meas.meta["overflow_warning"] = bool(frac > 0.01)
    return meas


def estimate_pi(batch, binning: Binning | None = None, groups=None) -> EmpiricalMeasure:
    """Renewal-reward estimate: pooled cycle occupation over pooled duration.

    Every deposit weighs the time spent in a bin, so the pooled occupation's
    total equals the pooled duration and normalizing by it is the ratio
    estimator.
    """
    occ = batch.occupation
    if occ is None or batch.n_cycles == 0:
        raise ValueError("empty batch")
    if binning is not None and binning != occ.binset.bulk:
        raise ValueError("binning mismatch: occupation was gathered on another grid")
    meas = occ.measure(groups, meta={"n_cycles": batch.n_cycles, "dt": batch.dt,
                                     "seed": batch.seed, **batch.params.as_dict()})
    if meas.total <= 0:
        raise ValueError("empty-measure")
    return _check_overflow(meas).normalized()


def time_average_measure(traj, binning: Binning, burn_in: float) -> EmpiricalMeasure:
    """Occupation of a recorded path after ``burn_in`` (left-point weights)."""
    t = traj.t
    if t[-1] - t[0] <= burn_in:
        raise ValueError("horizon must exceed burn_in")
    w = np.diff(t)
    keep = t[:-1] >= t[0] + burn_in
    h, v, w = traj.h[:-1][keep], traj.v[:-1][keep], w[keep]
    # histogram2d closes the last bin on the right; the kernels do not
    inside = (h < binning.h_max) & (v >= binning.v_min) & (v < binning.v_max)
    over = float(w.sum() - w[inside].sum())
    H, _, _ = np.histogram2d(h[inside], v[inside], bins=[binning.h_edges, binning.v_edges],
                             weights=w[inside])
    meas = EmpiricalMeasure(binning.h_edges, binning.v_edges, H, over,
                            {"burn_in": burn_in, "horizon": float(t[-1] - t[0])})
    return _check_overflow(meas).normalized()


def time_average_stream(params: ModelParams, init: SystemState, dt: float,
                        noise: NoiseSource, horizon: float, binset: BinningSet,
                        burn_in: float = 0.0, n_blocks: int = 20) -> Occupation:
    """Occupation of one long path, streamed through the compiled kernel.

    The window after ``burn_in`` is cut into ``n_blocks`` consecutive blocks
    (one row each) so batch-means errors are available.
    """
    if not horizon > 0:
        raise ValueError("zero-length window")
    init.validate(params)
    seed, stream = noise.key
    k = int(round(init.t / dt))
    st = (init.h, init.v, init.s, init.b, init.l)
    n_burn = int(round(burn_in / dt))
    if n_burn:
        seg = K.run_segments(*st, k, np.array([k + n_burn], np.int64), dt,
                             params.gamma, params.g, seed, stream, noise.scale)
        st = tuple(seg[0, 1:6])
        k += n_burn
    occ = Occupation.zeros(binset, n_blocks)
    n_total = int(math.ceil(horizon / dt - 1e-9))
    bounds = np.linspace(0, n_total, n_blocks + 1).round().astype(np.int64)
    bs, vs, hs = binset.bulk, binset.v_line, binset.h_line
    for j in range(n_blocks):
        n = int(bounds[j + 1] - bounds[j])
        k, *rest = K.run_occupation(*st, k, n, dt, params.gamma, params.g, seed, stream,
                                    noise.scale, bs.kernel_spec(), bs.nh, bs.nv,
                                    vs.kernel_spec(), vs.n, hs.kernel_spec(), hs.n,
                                    occ.bulk[j], occ.v_line[j], occ.h_line[j])
        st = tuple(rest)
    return occ


def measure_from_occupation(occ: Occupation, meta=None) -> EmpiricalMeasure:
    return _check_overflow(occ.measure(meta=meta)).normalized()


def pilot_binning(params: ModelParams, dt: float, noise: NoiseSource, n_cycles: int = 500,
                  q: float = 1e-4, nh: int = 200, nv: int = 200) -> Binning:
    """Bulk grid spanning the pilot run's q and 1-q marginal quantiles."""
    from .renewal import collect_cycles

    batch = collect_cycles(params, n_cycles, dt, noise, binset=BinningSet.default(params))
    occ = batch.occupation

    def quantile(axis, p):
        edges, surv = occ.survival(axis)
        return float(edges[np.searchsorted(-surv, -(1.0 - p))])

    h_max = quantile("h", 1.0 - q)
    v_min = quantile("v", q)
    v_max = quantile("v", 1.0 - q)
    # round outward to two significant digits so nearby pilots agree
    def up(x):
        e = 10 ** (math.floor(math.log10(abs(x))) - 1)
        return math.ceil(x / e) * e

    def down(x):
        e = 10 ** (math.floor(math.log10(abs(x))) - 1)
        return math.floor(x / e) * e

    v_min = max(down(v_min), params.velocity_floor)
    return Binning(up(h_max), v_min, up(v_max) if v_max > 0 else -down(-v_max), nh, nv)
