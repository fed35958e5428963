"""Regeneration cycles.

A cycle starts at the renewal point (0, -g/(1+gamma)).  The detector first
waits for the velocity to reach level a or b, then fires at the first upcrossing
of -g/(1+gamma) made while the particles touch.  Upward velocity motion only
happens through local time, so an upcrossing in a contact step is the discrete
version of returning to the renewal point; downcrossings with a positive gap
are ignored.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels as K
from .model import ModelParams, RenewalConfig, SystemState, derive_renewal_config
from .rng import NoiseSource
from .stationary import BinningSet, Occupation

RECORD_VERSION = 1
_F = {name: i for i, name in enumerate(K.CYC_FIELDS)}


class AbortBudgetError(RuntimeError):
    """Too many cycles hit the step cap; the configuration is suspect."""


@dataclass(frozen=True)
class RenewalCycle:
    duration: float
    max_v: float
    max_h: float
    t_start: float
    n_steps: int
    path_id: tuple            # (seed, stream_id, cycle index within the lane)
    occupation: object = None  # per-cycle measure, only when requested

    @property
    def sup_stats(self):
        return self.max_v, self.max_h


@dataclass
class CycleBatch:
    """Cycles of one or more lanes; ``table`` columns follow ``K.CYC_FIELDS``."""

    params: ModelParams
    renewal_cfg: RenewalConfig
    dt: float
    seed: int
    table: np.ndarray
    lanes: np.ndarray                   # stream id of each cycle
    occupation: Occupation | None = None
    n_aborted: int = 0
    n_partial: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_cycles(self) -> int:
        return int(self.table.shape[0])

    @property
    def durations(self) -> np.ndarray:
        return self.table[:, _F["t_end"]] - self.table[:, _F["t_start"]]

    @property
    def max_v(self) -> np.ndarray:
        return self.table[:, _F["max_v"]]

    @property
    def max_h(self) -> np.ndarray:
        return self.table[:, _F["max_h"]]

    @property
    def end_times(self) -> np.ndarray:
        return self.table[:, _F["t_end"]]

    @property
    def abort_fraction(self) -> float:
        return self.n_aborted / max(1, self.n_cycles + self.n_aborted)

    @property
    def cycles(self) -> list[RenewalCycle]:
        out = []
        idx = {}
        for row, lane in zip(self.table, self.lanes):
            j = idx.get(lane, 0)
            idx[lane] = j + 1
            out.append(RenewalCycle(float(row[_F["t_end"]] - row[_F["t_start"]]),
                                    float(row[_F["max_v"]]), float(row[_F["max_h"]]),
                                    float(row[_F["t_start"]]), int(row[_F["n_steps"]]),
                                    (self.seed, int(lane), j)))
        return out

    def end_state(self, i: int) -> SystemState:
        """Discrete state right after cycle ``i``'s firing step."""
        r = self.table[i]
        k = int(r[_F["end_step"]])
        h, s = float(r[_F["end_h"]]), float(r[_F["end_s"]])
        return SystemState(k * self.dt, h, float(r[_F["end_v"]]), s, s - h,
                           float(r[_F["end_b"]]), float(r[_F["end_l"]]))

    def merge(self, other: "CycleBatch") -> "CycleBatch":
        """Concatenate; occupation sums are added group by group."""
        if self.params != other.params or self.dt != other.dt:
            raise ValueError("batches differ in params or dt")
        occ = None
        if self.occupation is not None and other.occupation is not None:
            occ = self.occupation.merge(other.occupation)
        return CycleBatch(self.params, self.renewal_cfg, self.dt, self.seed,
                          np.concatenate([self.table, other.table]),
                          np.concatenate([self.lanes, other.lanes]), occ,
                          self.n_aborted + other.n_aborted, self.n_partial + other.n_partial,
                          dict(self.meta))

    def save(self, path) -> None:
        """Versioned record file: JSON header line, then one CSV row per cycle."""
        header = {"format": "inertdrift-cycles", "version": RECORD_VERSION,
                  "params": self.params.as_dict(), "dt": self.dt, "seed": self.seed,
                  "renewal_cfg": self.renewal_cfg.as_dict(), "n_cycles": self.n_cycles,
                  "n_aborted": self.n_aborted, "n_partial": self.n_partial}
        rows = np.column_stack([self.durations, self.max_v, self.max_h, self.lanes])
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            fh.write("duration,max_v,max_h,stream_id\n")
            np.savetxt(fh, rows, fmt="%.17g", delimiter=",")

    @classmethod
    def load(cls, path) -> "CycleBatch":
        with open(path) as fh:
            header = json.loads(fh.readline())
        if header.get("format") != "inertdrift-cycles":
            raise ValueError("not a cycle record file")
        if header["version"] != RECORD_VERSION:
            raise ValueError(f"unsupported record version {header['version']}")
        rows = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
        table = np.zeros((rows.shape[0], len(K.CYC_FIELDS)))
        table[:, _F["t_end"]] = np.cumsum(rows[:, 0])
        table[:, _F["t_start"]] = table[:, _F["t_end"]] - rows[:, 0]
        table[:, _F["max_v"]] = rows[:, 1]
        table[:, _F["max_h"]] = rows[:, 2]
        return cls(ModelParams(**header["params"]), RenewalConfig(**header["renewal_cfg"]),
                   header["dt"], header["seed"], table, rows[:, 3].astype(np.int64), None,
                   header["n_aborted"], header["n_partial"])


def _lane(args):
    (params, rc, dt, seed, stream, scale, n, init, k0, discard, max_steps, max_aborts,
     binset, n_groups) = args
    occ = Occupation.zeros(binset, n_groups, spare=1)
    b, vl, hl = binset.bulk, binset.v_line, binset.h_line
    out = K.run_cycles(init.h, init.v, init.s, init.b, init.l, k0, dt, params.gamma, params.g,
                       np.uint64(seed), np.uint64(stream), scale, rc.a, rc.b, rc.renewal_v,
                       n, max_steps, max_aborts, discard,
                       b.kernel_spec(), b.nh, b.nv, vl.kernel_spec(), vl.n, hl.kernel_spec(),
                       hl.n, occ.bulk, occ.v_line, occ.h_line)
    table, n_ab, n_part = out[0], int(out[1]), int(out[2])
    return table, n_ab, n_part, occ.drop_spare(n_groups)


def collect_cycles(params: ModelParams, n_cycles: int, dt: float, noise: NoiseSource,
                   t_cap_per_cycle: float = 1e4, *, binset: BinningSet | None = None,
                   n_groups: int = 20, n_lanes: int = 1, workers: int = 1,
                   init: SystemState | None = None, discard_first: bool | None = None,
                   max_abort_fraction: float = 1e-4) -> CycleBatch:
    """``n_cycles`` complete cycles split over ``n_lanes`` streams.

    Each lane follows one driving path from ``init`` (the renewal point by
    default), cutting it at successive renewals; a non-renewal start's first
    partial cycle is dropped unless ``discard_first`` says otherwise.  Lanes
    are merged in stream order, so the result does not depend on ``workers``.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    if n_lanes < 1 or n_groups < 1:
        raise ValueError("n_lanes and n_groups must be >= 1")
    rc = derive_renewal_config(params)
    if binset is None:
        binset = BinningSet.default(params)
    if init is None:
        init = SystemState.initial(0.0, rc.renewal_v)
    init.validate(params)
    k0 = int(round(init.t / dt))
    discard = discard_first
    if discard is None:
        discard = not (init.h == 0.0 and init.v == rc.renewal_v)
    max_steps = max(1, math.ceil(t_cap_per_cycle / dt))
    per = [n_cycles // n_lanes + (1 if i < n_cycles % n_lanes else 0) for i in range(n_lanes)]
    jobs = []
    for i, n in enumerate(per):
        if n == 0:
            continue
        lane = noise.lane(i)
        max_ab = int(max_abort_fraction * n) + 1
        jobs.append((params, rc, dt, lane.seed, lane.stream_id, lane.scale, n, init, k0,
                     discard, max_steps, max_ab, binset, n_groups))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_lane, jobs))
    else:
        results = [_lane(j) for j in jobs]

    tables, lanes, occ = [], [], None
    n_ab = n_part = 0
    for job, (table, a, p, o) in zip(jobs, results):
        tables.append(table)
        lanes.append(np.full(table.shape[0], job[4], np.int64))
        n_ab += a
        n_part += p
        occ = o if occ is None else occ.merge(o)
    batch = CycleBatch(params, rc, dt, noise.seed, np.concatenate(tables),
                       np.concatenate(lanes), occ, n_ab, n_part,
                       {"n_lanes": n_lanes, "n_groups": n_groups,
                        "t_cap_per_cycle": t_cap_per_cycle})
    if batch.n_cycles < n_cycles:
        raise AbortBudgetError(f"{n_ab} cycles aborted at the step cap; "
                               f"collected {batch.n_cycles} of {n_cycles}")
    return batch


@dataclass
class RenewalScan:
    times: np.ndarray         # interpolated renewal times
    armed_times: np.ndarray   # times at which phase 1 ended, one per renewal (plus pending)
    open_time: float          # time elapsed since the last renewal (or the start)
    aborted: bool


def detect_renewals(traj, renewal_cfg: RenewalConfig, max_cycle_time: float | None = None
                    ) -> RenewalScan:
    """Renewal times along a recorded path (every step must be recorded).

    ``aborted`` is set when the stretch after the last renewal reaches
    ``max_cycle_time`` (default: the whole recorded span).
    """
    t, v, l = traj.t, traj.v, traj.l
    if len(t) < 2:
        raise ValueError("trajectory too short")
    dts = np.diff(t)
    if not np.allclose(dts, traj.dt, rtol=1e-6, atol=1e-12):
        raise ValueError("renewal detection needs every step recorded (record_stride = 1)")
    a, b, rv = renewal_cfg.a, renewal_cfg.b, renewal_cfg.renewal_v
    v0, v1 = v[:-1], v[1:]
    armed = ((v0 - a) * (v1 - a) <= 0) | ((v0 - b) * (v1 - b) <= 0)
    fire = (np.diff(l) > 0) & (v0 < rv) & (v1 >= rv)
    armed_idx = np.flatnonzero(armed)
    fire_idx = np.flatnonzero(fire)
    times, arms = [], []
    pos = 0
    last = t[0]
    while True:
        j = np.searchsorted(armed_idx, pos)
        if j == armed_idx.size:
            break
        i1 = armed_idx[j]
        arms.append(t[i1])
        q = np.searchsorted(fire_idx, i1 + 1)
        if q == fire_idx.size:
            break
        i2 = fire_idx[q]
        theta = (rv - v0[i2]) / (v1[i2] - v0[i2])
        last = t[i2] + theta * dts[i2]
        times.append(last)
        pos = i2 + 1
    open_time = float(t[-1] - last)
    cap = float(t[-1] - t[0]) if max_cycle_time is None else max_cycle_time
    return RenewalScan(np.array(times), np.array(arms), open_time, open_time >= cap)


@dataclass
class ZetaTailReport:
    n: int
    t_grid: np.ndarray        # sqrt of duration thresholds
    log_surv: np.ndarray      # log P(zeta > t^2) on t_grid
    c: float                  # fitted rate in log P(zeta > t^2) ~ -c t
    c_ci: tuple
    intercept: float
    curvature: float          # quadratic coefficient of a second-order fit
    curvature_ci: tuple
    monotone: bool
    concave: bool
    degenerate: bool
    fit_range: tuple

    @property
    def passed(self) -> bool:
        return (not self.degenerate and self.monotone and self.concave
                and self.c > 0 and self.c_ci[0] > 0)

    def as_dict(self):
        return {"n": self.n, "c": self.c, "c_ci": list(self.c_ci), "intercept": self.intercept,
                "curvature": self.curvature, "curvature_ci": list(self.curvature_ci),
                "monotone": self.monotone, "concave": self.concave,
                "degenerate": self.degenerate, "fit_range": list(self.fit_range),
                "passed": self.passed}


def _durations(batch_or_durations):
    if isinstance(batch_or_durations, CycleBatch):
        return batch_or_durations.durations
    return np.asarray(batch_or_durations, float)


def _tail_fit(r, grid):
    """log of the empirical survival of ``r`` at ``grid``; slope/intercept/curvature."""
    rs = np.sort(r)
    surv = 1.0 - np.searchsorted(rs, grid, side="right") / rs.size
    ls = np.log(surv)
    slope, icpt = np.polyfit(grid, ls, 1)
    curv = np.polyfit(grid, ls, 2)[0]
    return ls, slope, icpt, curv


def zeta_tail_check(batch, min_cycles: int = 1000, n_grid: int = 20, min_tail: int = 20,
                    n_boot: int = 400, seed: int = 0) -> ZetaTailReport:
    """Fit log P(zeta > t^2) = intercept - c t on the upper half of sqrt(zeta).

    The grid runs from the median of sqrt(zeta) to the point where ``min_tail``
    cycles remain.  Confidence intervals are 95% percentile bootstrap over
    cycles.
    """
    d = _durations(batch)
    n = d.size
    if n < max(2, min_cycles):
        raise ValueError("insufficient cycles")
    if np.any(d <= 0):
        raise ValueError("durations must be positive")
    r = np.sqrt(d)
    lo, hi = np.quantile(r, 0.5), np.sort(r)[n - min_tail - 1]
    if not hi > lo or np.ptp(r) == 0:
        nan = float("nan")
        return ZetaTailReport(n, np.array([]), np.array([]), nan, (nan, nan), nan, nan,
                              (nan, nan), True, False, True, (float(lo), float(hi)))
    grid = np.linspace(lo, hi, n_grid)
    ls, slope, icpt, curv = _tail_fit(r, grid)
    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot, 2))
    for i in range(n_boot):
        rb = r[rng.integers(0, n, n)]
        _, sb, _, cb = _tail_fit(rb, grid)
        boots[i] = -sb, cb
    c_ci = tuple(np.quantile(boots[:, 0], [0.025, 0.975]))
    curv_ci = tuple(np.quantile(boots[:, 1], [0.025, 0.975]))
    monotone = bool(np.all(np.diff(ls) <= 0))
    return ZetaTailReport(n, grid, ls, float(-slope), c_ci, float(icpt), float(curv), curv_ci,
                          monotone, bool(curv_ci[0] <= 0), False, (float(lo), float(hi)))


@dataclass
class IIDReport:
    n: int
    lag1: float
    lag2: float
    band: float               # 2/sqrt(n) null band
    lag_ci: tuple             # (lag1 CI, lag2 CI) at 95%
    ks_stat: float
    ks_p: float

    @property
    def dependent(self) -> bool:
        return abs(self.lag1) >= self.band or abs(self.lag2) >= self.band

    @property
    def heterogeneous(self) -> bool:
        return self.ks_p < 0.01

    @property
    def consistent(self) -> bool:
        return not (self.dependent or self.heterogeneous)

    def as_dict(self):
        return {"n": self.n, "lag1": self.lag1, "lag2": self.lag2, "band": self.band,
                "lag_ci": [list(c) for c in self.lag_ci], "ks_stat": self.ks_stat,
                "ks_p": self.ks_p, "consistent": self.consistent}


def _autocorr(x, lag):
    x = x - x.mean()
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))


def cycle_iid_diagnostics(batch, min_cycles: int = 1000) -> IIDReport:
    """Lag-1/lag-2 autocorrelation of durations and a KS test of first versus
    second half."""
    d = _durations(batch)
    n = d.size
    if n < max(3, min_cycles):
        raise ValueError("insufficient cycles")
    r1, r2 = _autocorr(d, 1), _autocorr(d, 2)
    # Fisher-z intervals
    se = 1.0 / math.sqrt(n - 3)
    cis = tuple((math.tanh(math.atanh(r) - 1.96 * se), math.tanh(math.atanh(r) + 1.96 * se))
                for r in (r1, r2))
    ks = stats.ks_2samp(d[: n // 2], d[n // 2:])
    return IIDReport(n, r1, r2, 2.0 / math.sqrt(n), cis, float(ks.statistic), float(ks.pvalue))
