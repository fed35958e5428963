"""Monte Carlo checks of closed-form hitting-probability bounds.

Every ``BoundSpec`` couples a starting state, a stopping event and an
analytic bound.  Specs whose constants are explicit run in *level* mode:
a 99% Wilson interval for the event probability is compared with the bound
value.  Specs whose prefactor is an unknown ``e^c`` run in *shape* mode: the
decay rate of ``log p`` along an abscissa is fitted with a jackknife interval
and compared with the bound's exponent.

Trials that hit the time cap before the event is decided are kept apart.
Each verdict is computed twice, once counting them as misses and once as
hits; when the two disagree the verdict is ``inconclusive``.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import stats

from . import _kernels as K
from .model import ModelParams, derive_renewal_config
from .rng import NoiseSource

Z99 = float(stats.norm.ppf(0.995))
MISS, HIT, UNDECIDED = 0, 1, 2
MIN_TRIALS = 10_000


def wilson(k: int, n: int, z: float = Z99) -> tuple[float, float]:
    """Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        raise ValueError("wilson interval needs n > 0")
    p = k / n
    den = 1.0 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    # the limits are exactly 0 and 1 at the extremes; rounding can miss them
    lo = 0.0 if k == 0 else max(0.0, mid - half)
    hi = 1.0 if k == n else min(1.0, mid + half)
    return lo, hi


def derive_seed(base: int, *labels) -> int:
    """Deterministic 63-bit seed from a base seed and arbitrary labels."""
    msg = json.dumps([int(base), *labels], sort_keys=True, default=str).encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little") >> 1


# ---------------------------------------------------------------------------
# specs and reports

@dataclass(frozen=True)
class BoundSpec:
    """One analytic bound with its Monte Carlo harness.

    ``sampler(params, grid, n, dt, seed, workers)`` returns an int8 array of
    shape ``(len(grid), n)`` with entries MISS, HIT or UNDECIDED.  In shape
    mode ``transform`` gives the abscissa of a setting, ``rate`` the bound's
    decay exponent along it and ``offset`` an explicit log-prefactor that is
    removed before fitting.  ``rate=None`` means the exponent is an unknown
    positive constant, in which case a significantly negative slope is needed.
    """

    name: str
    init_sampler: str
    event: str
    direction: str
    mode: str
    bound_fn: Callable[[ModelParams, dict], float]
    validity: Callable[[ModelParams, dict], bool]
    validity_text: str
    sampler: Callable
    settings: Callable[[ModelParams], list]
    n_trials: int = 20_000
    transform: Callable | None = None
    rate: Callable | None = None
    offset: Callable | None = None
    min_events: int = 30

    def __post_init__(self):
        if self.direction not in ("upper", "lower"):
            raise ValueError(f"direction must be upper or lower, got {self.direction!r}")
        if self.mode not in ("level", "shape"):
            raise ValueError(f"mode must be level or shape, got {self.mode!r}")
        if self.mode == "shape" and self.transform is None:
            raise ValueError("shape specs need a transform")


@dataclass
class BoundReport:
    spec: str
    args: dict
    direction: str
    n_trials: int
    n_events: int
    n_undecided: int
    p_hat: float
    wilson_ci: tuple
    bound_value: float
    verdict: str
    tight: bool = False

    def as_dict(self):
        return asdict(self)


@dataclass
class ShapeReport:
    spec: str
    direction: str
    grid: list
    abscissa: list
    p_hat: list
    n_events: list
    n_trials: int
    n_undecided: int
    slope: float
    slope_ci: tuple
    reference_slope: float
    verdict: str
    note: str = ""

    def as_dict(self):
        return asdict(self)


@dataclass
class SuiteReport:
    params: dict
    dt: float
    seed: int
    level: list = field(default_factory=list)
    shape: list = field(default_factory=list)

    @property
    def verdicts(self) -> dict:
        out: dict = {}
        for r in self.level + self.shape:
            out.setdefault(r.spec, []).append(r.verdict)
        return out

    @property
    def passed(self) -> bool:
        return all(r.verdict == "pass" for r in self.level + self.shape)

    def as_dict(self):
        return {"params": self.params, "dt": self.dt, "seed": self.seed,
                "level": [r.as_dict() for r in self.level],
                "shape": [r.as_dict() for r in self.shape]}

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [f"{'spec':<34} {'args':<28} {'p_hat':>10} {'ci':>23} {'bound':>10}  verdict"]
        for r in self.level:
            a = ",".join(f"{k}={v:.4g}" for k, v in r.args.items())
            rows.append(f"{r.spec:<34} {a:<28} {r.p_hat:10.3e} "
                        f"[{r.wilson_ci[0]:9.3e},{r.wilson_ci[1]:9.3e}] "
                        f"{r.bound_value:10.3e}  {r.verdict}{' (tight)' if r.tight else ''}")
        for r in self.shape:
            lo, hi = r.slope_ci
            rows.append(f"{r.spec:<34} {'slope over ' + str(len(r.abscissa)) + ' pts':<28} "
                        f"{r.slope:10.4f} [{lo:9.4f},{hi:9.4f}] {r.reference_slope:10.4f}  "
                        f"{r.verdict}{' (' + r.note + ')' if r.note else ''}")
        return "\n".join(rows)


# ---------------------------------------------------------------------------
# verdicts

def _combine(a: str, b: str) -> str:
    if a == b:
        return a
    return "inconclusive"


def level_verdict(direction: str, k: int, n_und: int, n: int, bound: float):
    """(verdict, tight) for a level check with undecided trials bracketed."""
    out = []
    for hits in (k, k + n_und):
        lo, hi = wilson(hits, n)
        if direction == "upper":
            out.append("fail" if lo > bound else "pass")
        else:
            out.append("fail" if hi < bound else "pass")
    lo, hi = wilson(k, n)
    return _combine(*out), bool(lo <= bound <= hi)


def _wls_slope(z, y, w):
    W = w.sum()
    zm = (w * z).sum() / W
    ym = (w * y).sum() / W
    return float((w * (z - zm) * (y - ym)).sum() / (w * (z - zm) ** 2).sum())


def shape_fit(z, hits, n, offset=None, n_groups=20, level=0.99):
    """Weighted slope of ``log p_hat - offset`` on ``z`` with a delete-one-group
    jackknife interval.

    ``hits`` is a boolean (settings x trials) array; trials are split into
    ``n_groups`` contiguous groups for the jackknife.
    """
    z = np.asarray(z, float)
    off = np.zeros_like(z) if offset is None else np.asarray(offset, float)

    def fit(k, m):
        p = k / m
        w = k / np.maximum(1.0 - p, 1e-12)
        return _wls_slope(z, np.log(p) - off, w)

    k = hits.sum(axis=1).astype(float)
    slope = fit(k, n)
    edges = np.linspace(0, n, n_groups + 1).astype(int)
    gk = np.stack([hits[:, edges[i]:edges[i + 1]].sum(axis=1) for i in range(n_groups)])
    reps = []
    for gi in range(n_groups):
        kk = k - gk[gi]
        if np.any(kk <= 0):
            continue
        reps.append(fit(kk, n - (edges[gi + 1] - edges[gi])))
    reps = np.array(reps)
    if reps.size < 3:
        return slope, (-math.inf, math.inf)
    m = reps.size
    se = math.sqrt((m - 1) / m * np.sum((reps - reps.mean()) ** 2))
    q = stats.t.ppf(0.5 + level / 2, m - 1)
    return slope, (slope - q * se, slope + q * se)


def _shape_verdict(direction, rate, ci):
    lo, hi = ci
    if rate is None:          # unknown positive exponent: decay must be visible
        if hi < 0:
            return "pass"
        return "fail" if lo > 0 else "inconclusive"
    if direction == "upper":
        return "fail" if lo > -rate else "pass"
    return "fail" if hi < -rate else "pass"


# ---------------------------------------------------------------------------
# runners

def _check_valid(spec, params, args):
    if not spec.validity(params, args):
        raise ValueError(f"{spec.name}: arguments {args} outside the validity domain "
                         f"({spec.validity_text})")


def run_bound(spec: BoundSpec, params: ModelParams, args: dict, n_trials: int | None = None,
              dt: float = 1e-3, noise: NoiseSource | None = None, workers: int = 1) -> BoundReport:
    """Level check of one argument setting."""
    if spec.mode != "level":
        raise ValueError(f"{spec.name} is a shape spec; use run_shape")
    _check_valid(spec, params, args)
    n = n_trials or spec.n_trials
    if n < MIN_TRIALS:
        raise ValueError(f"n_trials must be at least {MIN_TRIALS}")
    seed = (noise or NoiseSource()).seed
    out = spec.sampler(params, [args], n, dt, derive_seed(seed, spec.name), workers)[0]
    k = int(np.sum(out == HIT))
    und = int(np.sum(out == UNDECIDED))
    bound = float(spec.bound_fn(params, args))
    verdict, tight = level_verdict(spec.direction, k, und, n, bound)
    return BoundReport(spec.name, dict(args), spec.direction, n, k, und, k / n,
                       wilson(k, n), bound, verdict, tight)


def run_shape(spec: BoundSpec, params: ModelParams, grid: list | None = None,
              n_trials: int | None = None, dt: float = 1e-3,
              noise: NoiseSource | None = None, workers: int = 1) -> ShapeReport:
    """Decay-rate check over a grid of argument settings."""
    if spec.mode != "shape":
        raise ValueError(f"{spec.name} is a level spec; use run_bound")
    grid = list(grid if grid is not None else spec.settings(params))
    for a in grid:
        _check_valid(spec, params, a)
    n = n_trials or spec.n_trials
    if n < MIN_TRIALS:
        raise ValueError(f"n_trials must be at least {MIN_TRIALS}")
    seed = (noise or NoiseSource()).seed
    out = spec.sampler(params, grid, n, dt, derive_seed(seed, spec.name), workers)
    z = np.array([spec.transform(params, a) for a in grid])
    off = None if spec.offset is None else np.array([spec.offset(params, a) for a in grid])
    rate = None if spec.rate is None else float(spec.rate(params, grid[0]))
    k = (out == HIT).sum(axis=1)
    und = int(np.sum(out == UNDECIDED))
    keep = k >= spec.min_events
    note = ""
    if keep.sum() < 3:
        verdict, slope, ci = "inconclusive", math.nan, (math.nan, math.nan)
        note = f"only {int(keep.sum())} settings reach {spec.min_events} events"
    else:
        if not keep.all():
            note = f"dropped {int((~keep).sum())} settings below {spec.min_events} events"
        zk = z[keep]
        ok = None if off is None else off[keep]
        verdicts = []
        for hits in (out[keep] == HIT, out[keep] != MISS):
            s, c = shape_fit(zk, hits, n, ok)
            verdicts.append(_shape_verdict(spec.direction, rate, c))
            if len(verdicts) == 1:
                slope, ci = s, c
        verdict = _combine(*verdicts)
    return ShapeReport(spec.name, spec.direction, grid, z.tolist(), (k / n).tolist(),
                       k.tolist(), n, und, float(slope), tuple(float(c) for c in ci),
                       -rate if rate is not None else 0.0, verdict, note)


def run_suite(params: ModelParams | None = None, seed: int = 0, dt: float = 1e-3,
              trial_factor: float = 1.0, workers: int = 1, specs=None) -> SuiteReport:
    """Every registered spec on its default settings."""
    params = params or ModelParams()
    rep = SuiteReport(params.as_dict(), dt, seed)
    noise = NoiseSource(seed)
    for spec in specs or registry():
        n = max(MIN_TRIALS, int(round(spec.n_trials * trial_factor)))
        if spec.mode == "level":
            for a in spec.settings(params):
                rep.level.append(run_bound(spec, params, a, n, dt, noise, workers))
        else:
            rep.shape.append(run_shape(spec, params, None, n, dt, noise, workers))
    return rep


# ---------------------------------------------------------------------------
# samplers

def _exit_job(job):
    return K.run_exits(*job)


def exit_trials(params: ModelParams, h0: float, v0: float, n: int, dt: float, seed: int, *,
                v_lo=-math.inf, v_hi=math.inf, h_hi=math.inf, contact=False,
                t_max=100.0, bridge=False, workers=1, stream0=0):
    """``n`` independent first-exit trials from (h0, v0); trial i uses stream
    ``stream0 + i``.  Returns (code, t_exit, h, v, step, max_v, max_h)."""
    max_steps = max(1, math.ceil(t_max / dt))
    streams = stream0 + np.arange(n, dtype=np.int64)
    h = np.full(n, float(h0))
    v = np.full(n, float(v0))
    k0 = np.zeros(n, np.int64)
    return exit_trials_from(params, h, v, k0, streams, dt, seed, v_lo=v_lo, v_hi=v_hi,
                            h_hi=h_hi, contact=contact, max_steps=max_steps,
                            bridge=bridge, workers=workers)


def exit_trials_from(params, h, v, k0, streams, dt, seed, *, v_lo=-math.inf, v_hi=math.inf,
                     h_hi=math.inf, contact=False, max_steps=10**6, bridge=False, workers=1):
    """Array version of ``exit_trials`` with per-trial start state and step."""
    n = h.shape[0]
    common = (np.uint64(seed), 1.0, dt, params.gamma, params.g, float(v_lo), float(v_hi),
              float(h_hi), bool(contact), int(max_steps), bool(bridge))
    if workers > 1 and n >= 4 * workers:
        cuts = np.linspace(0, n, workers + 1).astype(int)
        jobs = [(h[a:b], v[a:b], k0[a:b], streams[a:b].astype(np.uint64), *common)
                for a, b in zip(cuts[:-1], cuts[1:])]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_exit_job, jobs))
        return tuple(np.concatenate(c) for c in zip(*parts))
    return K.run_exits(h, v, k0, streams.astype(np.uint64), *common)


def _independent(make):
    """Sampler running each setting on its own seed: ``make(params, args)``
    gives (h0, v0, exit kwargs, classify) where ``classify(result)`` maps the
    exit result to outcome codes."""
    def sampler(params, grid, n, dt, seed, workers):
        out = np.empty((len(grid), n), np.int8)
        for i, a in enumerate(grid):
            h0, v0, kw, classify = make(params, a)
            res = exit_trials(params, h0, v0, n, dt, derive_seed(seed, a), workers=workers, **kw)
            out[i] = classify(res)
        return out
    return sampler


def _survival(make, t_of):
    """Sampler for events ``tau > t``: settings sharing a start state share
    one run to the largest t, so results do not depend on how the grid is
    split."""
    def sampler(params, grid, n, dt, seed, workers):
        out = np.empty((len(grid), n), np.int8)
        groups: dict = {}
        for i, a in enumerate(grid):
            h0, v0, kw = make(params, a)
            key = json.dumps([h0, v0, sorted(kw.items())], default=str)
            groups.setdefault(key, []).append(i)
        for key, idx in groups.items():
            h0, v0, kw = make(params, grid[idx[0]])
            t_max = max(t_of(params, grid[i]) for i in idx)
            code, te, *_ = exit_trials(params, h0, v0, n, dt, derive_seed(seed, key),
                                       t_max=t_max * (1 + 1e-9) + dt, workers=workers, **kw)
            for i in idx:
                t = t_of(params, grid[i])
                out[i] = np.where((code == K.TIMEOUT) | (te > t), HIT, MISS)
        return out
    return sampler


def _classify(hit_code):
    def classify(res):
        code = res[0]
        return np.where(code == hit_code, HIT, np.where(code == K.TIMEOUT, UNDECIDED, MISS))
    return classify


@lru_cache(maxsize=4)
def _cycle_maxima(params: ModelParams, n: int, dt: float, seed: int, workers: int):
    from .renewal import collect_cycles
    from .stationary import Binning, BinningSet, LineBinning
    # occupation is not needed here; a tiny grid keeps the deposits cheap
    tiny = BinningSet(Binning(1.0, params.velocity_floor + 1e-9, 1.0, 1, 1),
                      LineBinning(-1.0, 1.0, 1), LineBinning(0.0, 1.0, 1))
    batch = collect_cycles(params, n, dt, NoiseSource(seed), binset=tiny, n_groups=1,
                           n_lanes=8, workers=workers)
    return batch.max_v[:n].copy(), batch.max_h[:n].copy()


def _cycle_sampler(column, level_key):
    def sampler(params, grid, n, dt, seed, workers):
        mv, mh = _cycle_maxima(params, n, dt, seed, workers)
        vals = mv if column == "v" else mh
        return np.stack([np.where(vals >= a[level_key], HIT, MISS) for a in grid]).astype(np.int8)
    return sampler


def _delay_sampler(params, grid, n, dt, seed, workers):
    """Contact delay after the velocity falls to the lower renewal level."""
    rc = derive_renewal_config(params)
    a0 = grid[0]
    if any((a["h"], a["nu"]) != (a0["h"], a0["nu"]) for a in grid):
        raise ValueError("delay settings must share their start state")
    t_max = max(a["t"] for a in grid)
    code, te, hf, vf, kf, *_ = exit_trials(params, a0["h"], a0["nu"], n, dt, seed,
                                           v_lo=rc.a, v_hi=rc.b, t_max=1e4, workers=workers)
    out = np.full((len(grid), n), MISS, np.int8)
    out[:, code == K.TIMEOUT] = UNDECIDED
    low = np.flatnonzero(code == K.HIT_V_LO)
    if low.size:
        c2, te2, *_ = exit_trials_from(params, hf[low], vf[low], kf[low], low.astype(np.int64),
                                       dt, seed, contact=True, bridge=True,
                                       max_steps=math.ceil(t_max / dt) + 2, workers=workers)
        delay = np.where(c2 == K.TIMEOUT, math.inf, te2 - te[low])
        for i, a in enumerate(grid):
            out[i, low] = np.where(delay > a["t"], HIT, MISS)
    return out


# ---------------------------------------------------------------------------
# closed forms

def _big_before_small_bound(p, a):
    y = a["y"]
    return math.exp(p.g ** 2 / (1 + p.gamma) - (1 + p.gamma) * (y + p.g / (1 + p.gamma)) ** 2)


def _contact_before_slow_prefactor(p, x):
    return 2 * math.sqrt(2 * p.gamma) / math.sqrt(math.pi * p.g * x)


def _slow_nu_max(p, a_lvl, x):
    return (a_lvl + p.g / p.gamma) * math.exp(p.gamma ** 2 * x / (4 * p.g)) - p.g / p.gamma


def _drop_u(p):
    return -(p.g - p.g / (4 * (1 + p.gamma))) / (1 + p.gamma)


def _drop_t0(p, u):
    """Smallest t with 0 < sqrt(t) / (t((1+gamma)u+g) + u) < 1."""
    c = (1 + p.gamma) * u + p.g
    # c*s^2 - s + u > 0 with s = sqrt(t)
    s = (1 + math.sqrt(1 - 4 * c * u)) / (2 * c)
    return s * s


def _rise_t0(p, a):
    e = a["eps"]
    return 2 * a["h"] / e + 2 * p.g / (e * p.gamma * (1 + p.gamma)) + 4 / e ** 2


def _rise_u(p, a):
    return -(p.g + a["eps"]) / (1 + p.gamma)


def registry() -> list[BoundSpec]:
    """The registered bound checks.  Settings are chosen for gamma = g = 1 but
    scale with the model's velocity and length units."""

    # fast velocity excursion from (0, y): reaches 2y before y/2
    def big_make(p, a):
        y = a["y"]
        return 0.0, y, dict(v_lo=y / 2, v_hi=2 * y, t_max=50.0), _classify(K.HIT_V_HI)

    big_sampler = _independent(big_make)
    big_valid = lambda p, a: a["y"] > 0 and p.gamma > 0

    # gap rises to x before contact
    def gap_make(p, a):
        return (a["h"], a["nu"], dict(h_hi=a["x"], contact=True, bridge=True, t_max=500.0),
                _classify(K.HIT_H_HI))

    def gap_up_settings(p):
        out = [{"x": x, "h": x / 2, "nu": p.gamma * x / 4 - p.g / p.gamma}
               for x in (2.0, 4.0, 8.0)]
        out.append({"x": 4.0, "h": 2.0, "nu": -0.5 * p.g / p.gamma})
        return out

    def gap_lo_settings(p):
        h = p.gamma / (2 * p.g) * math.log(2)
        nu = -0.5 * p.g / p.gamma
        return [{"x": 1.0, "h": h, "nu": nu}, {"x": 2.0, "h": h, "nu": nu},
                {"x": 4.0, "h": h, "nu": nu},
                {"x": 2.0, "h": h, "nu": -0.99 * p.g / p.gamma}]

    # contact before the velocity slows to the level a
    def slow_level(p):
        return derive_renewal_config(p).a

    def slow_make(p, a):
        return (a["x"] / 2, a["nu"], dict(v_lo=a["a"], contact=True, bridge=True,
                                          t_max=20.0 + a["x"]), _classify(K.HIT_CONTACT))

    def slow_setting(p, x):
        al = slow_level(p)
        return {"x": x, "a": al, "nu": _slow_nu_max(p, al, x)}

    def slow_valid(p, a):
        return (a["x"] > 0 and a["a"] > -p.g / p.gamma
                and a["a"] <= a["nu"] <= _slow_nu_max(p, a["a"], a["x"]) + 1e-12)

    def slow_bound(p, a):
        x = a["x"]
        return min(1.0, _contact_before_slow_prefactor(p, x) * math.exp(-x * p.g / (8 * p.gamma)))

    # escape from [a, b] started on the boundary
    def esc_settings(p):
        rc = derive_renewal_config(p)
        ell = 1.25 * (rc.b - rc.a) / (p.gamma * rc.a + p.g)
        return [{"m": m, "ell": ell, "nu": rc.renewal_v} for m in (1, 2, 4)]

    def esc_make(p, a):
        rc = derive_renewal_config(p)
        return 0.0, a["nu"], dict(v_lo=rc.a, v_hi=rc.b)

    def esc_bound(p, a):
        rc = derive_renewal_config(p)
        q = stats.norm.cdf(rc.b - rc.a + (1 + p.gamma) * rc.b + p.g)
        return float(q ** a["m"])

    def esc_valid(p, a):
        rc = derive_renewal_config(p)
        return (a["m"] >= 1 and a["ell"] > (rc.b - rc.a) / (p.gamma * rc.a + p.g)
                and rc.a <= a["nu"] <= rc.b)

    # velocity above u in (-g/(1+gamma), 0) takes long to drop to u
    def drop_settings(p):
        u = _drop_u(p)
        t0 = _drop_t0(p, u)
        rc = derive_renewal_config(p)
        return [{"u": u, "nu": rc.b, "t": 1.25 * t0}, {"u": u, "nu": 0.0, "t": 1.25 * t0},
                {"u": u, "nu": 0.0, "t": 2.0 * t0}]

    def drop_valid(p, a):
        u, nu, t = a["u"], a["nu"], a["t"]
        if not (-p.g / (1 + p.gamma) < u < 0 and u < nu <= 0 and t > 0):
            return False
        den = t * ((1 + p.gamma) * u + p.g) + u
        return 0 < math.sqrt(t) / den < 1 if den > 0 else False

    def drop_bound(p, a):
        u, nu, t = a["u"], a["nu"], a["t"]
        return math.exp(-(t * ((1 + p.gamma) * u + p.g) + u - nu) ** 2 / (2 * t))

    # velocity below u rises to u
    def rise_settings(p):
        eps = 0.9 * p.g / p.gamma
        u = -(p.g + eps) / (1 + p.gamma)
        nu = -p.g / p.gamma + 0.2 * (u + p.g / p.gamma)
        base = {"eps": eps, "h": p.g / p.gamma ** 2, "nu": nu}
        t0 = _rise_t0(p, base)
        return [dict(base, t=t0 + d / p.gamma) for d in (0.25, 0.75, 1.25, 1.75, 2.25)]

    def rise_make(p, a):
        return a["h"], a["nu"], dict(v_hi=_rise_u(p, a))

    def rise_valid(p, a):
        e = a["eps"]
        return (p.gamma > 0 and 0 < e < p.g / p.gamma and a["h"] >= 0
                and -p.g / p.gamma < a["nu"] < _rise_u(p, a) and a["t"] > _rise_t0(p, a))

    def rise_bound(p, a):
        e = a["eps"]
        theta = a["h"] + p.g / p.gamma + _rise_u(p, a)
        return min(1.0, math.exp(e * theta - e * e * a["t"] / 2))

    # velocity above u > 0 falls to u
    def fall_settings(p):
        s = p.g / p.gamma
        return [{"u": 0.5 * s, "nu": s, "t": t} for t in (0.5, 1.0, 2.0)] + \
               [{"u": s, "nu": 3 * s, "t": 1.5}]

    def fall_make(p, a):
        return 0.0, a["nu"], dict(v_lo=a["u"])

    def fall_bound(p, a):
        u, nu, t = a["u"], a["nu"], a["t"]
        return min(1.0, math.exp(-2 * u * (u - nu + t * (p.gamma * u + p.g))))

    # contact delay after the velocity first falls to a
    def delay_settings(p):
        rc = derive_renewal_config(p)
        t_min = 2.0
        h = t_min * p.g / (4 * p.gamma * (1 + p.gamma))
        return [{"h": h, "nu": rc.renewal_v, "t": t} for t in (2.0, 2.5, 3.0, 3.5, 4.0)]

    def delay_valid(p, a):
        rc = derive_renewal_config(p)
        return (a["t"] > 0 and 0 <= a["h"] <= a["t"] * p.g / (4 * p.gamma * (1 + p.gamma))
                and rc.a < a["nu"] < rc.b)

    zv = lambda p, a: (a["y"] + p.g / (1 + p.gamma)) ** 2
    cycle_v_settings = lambda p: [{"y": y} for y in (0.5, 0.75, 1.0, 1.25, 1.5)]
    cycle_h_settings = lambda p: [{"x": x} for x in (1.0, 2.0, 3.0, 4.0, 5.0)]

    specs = [
        BoundSpec("vel_hits_large_before_small", "(0, y)", "V reaches 2y before y/2",
                  "upper", "shape", _big_before_small_bound, big_valid, "y > 0",
                  big_sampler, lambda p: [{"y": y} for y in (0.2, 0.35, 0.5, 0.65, 0.8)],
                  n_trials=100_000, transform=zv, rate=lambda p, a: 1 + p.gamma),
        BoundSpec("vel_hits_large_before_small_explicit", "(0, y)", "V reaches 2y before y/2",
                  "upper", "level", _big_before_small_bound, big_valid, "y > 0",
                  big_sampler, lambda p: [{"y": y} for y in (1.0, 1.5, 2.0)],
                  n_trials=20_000),
        BoundSpec("cycle_velocity_max_upper", "renewal point", "sup of V over a cycle >= y",
                  "upper", "shape", lambda p, a: math.exp(-(1 + p.gamma) / 4 * zv(p, a)),
                  lambda p, a: a["y"] > 0, "y > y'(gamma, g), taken as the fitted tail",
                  _cycle_sampler("v", "y"), cycle_v_settings, n_trials=100_000,
                  transform=zv, rate=lambda p, a: (1 + p.gamma) / 4),
        BoundSpec("cycle_velocity_max_lower", "renewal point", "sup of V over a cycle >= y",
                  "lower", "shape", lambda p, a: math.exp(-2 * (1 + p.gamma) * zv(p, a)),
                  lambda p, a: a["y"] > 0, "y > y'(gamma, g), taken as the fitted tail",
                  _cycle_sampler("v", "y"), cycle_v_settings, n_trials=100_000,
                  transform=zv, rate=lambda p, a: 2 * (1 + p.gamma)),
        BoundSpec("gap_increases_before_zero_upper", "(x/2, nu), nu <= gamma x/4 - g/gamma",
                  "H reaches x before contact", "upper", "level",
                  lambda p, a: math.exp(-a["x"] * p.g / (2 * p.gamma)),
                  lambda p, a: (a["x"] > 0 and a["h"] == a["x"] / 2
                                and -p.g / p.gamma < a["nu"] <= p.gamma * a["x"] / 4 - p.g / p.gamma),
                  "x > 0, nu in (-g/gamma, gamma x/4 - g/gamma]",
                  _independent(gap_make), gap_up_settings, n_trials=20_000),
        BoundSpec("gap_increases_before_zero_lower", "(h, nu), h >= (gamma/2g) log 2",
                  "H reaches x before contact", "lower", "level",
                  lambda p, a: math.exp(-2 * a["x"] * p.g / p.gamma),
                  lambda p, a: (a["x"] > a["h"] >= p.gamma / (2 * p.g) * math.log(2) - 1e-12
                                and a["nu"] > -p.g / p.gamma),
                  "x > h >= (gamma/2g) log 2, nu > -g/gamma",
                  _independent(gap_make), gap_lo_settings, n_trials=50_000),
        BoundSpec("gap_hits_zero_before_vel_small", "(x/2, nu_max(x))",
                  "contact before V falls to a", "upper", "shape",
                  slow_bound, slow_valid, "x > 0, a > -g/gamma, nu in [a, nu_max(x)]",
                  _independent(slow_make),
                  lambda p: [slow_setting(p, x) for x in (2.0, 3.0, 4.0, 5.0, 6.0, 7.0)],
                  n_trials=100_000, transform=lambda p, a: a["x"],
                  rate=lambda p, a: p.g / (8 * p.gamma),
                  offset=lambda p, a: math.log(_contact_before_slow_prefactor(p, a["x"]))),
        BoundSpec("gap_hits_zero_before_vel_small_explicit", "(x/2, nu_max(x))",
                  "contact before V falls to a", "upper", "level",
                  slow_bound, slow_valid, "x > 0, a > -g/gamma, nu in [a, nu_max(x)]",
                  _independent(slow_make), lambda p: [slow_setting(p, x) for x in (4.0, 8.0, 12.0)],
                  n_trials=20_000),
        BoundSpec("cycle_gap_max_upper", "renewal point", "H reaches x within a cycle",
                  "upper", "shape", lambda p, a: math.exp(-a["x"] * p.g / (16 * p.gamma)),
                  lambda p, a: a["x"] > 0, "x > x'(gamma, g), taken as the fitted tail",
                  _cycle_sampler("h", "x"), cycle_h_settings, n_trials=100_000,
                  transform=lambda p, a: a["x"], rate=lambda p, a: p.g / (16 * p.gamma)),
        BoundSpec("cycle_gap_max_lower", "renewal point", "H reaches x within a cycle",
                  "lower", "shape", lambda p, a: math.exp(-2 * a["x"] * p.g / p.gamma),
                  lambda p, a: a["x"] > 0, "x > x'(gamma, g), taken as the fitted tail",
                  _cycle_sampler("h", "x"), cycle_h_settings, n_trials=100_000,
                  transform=lambda p, a: a["x"], rate=lambda p, a: 2 * p.g / p.gamma),
        BoundSpec("vel_escape_interval", "(0, nu), nu in [a, b]",
                  "V stays in [a, b] for time m(ell+1)", "upper", "level",
                  esc_bound, esc_valid, "ell > (b-a)/(gamma a + g), m >= 1, nu in [a, b]",
                  _survival(esc_make, lambda p, a: a["m"] * (a["ell"] + 1)), esc_settings,
                  n_trials=20_000),
        BoundSpec("gap_hits_zero_before_long", "(h, nu) in [0, t g/4gamma(1+gamma)] x (a, b)",
                  "contact delay after V falls to a exceeds t", "upper", "shape",
                  lambda p, a: math.exp(-a["t"]), delay_valid,
                  "t > 0, h <= t g/(4 gamma (1+gamma)), nu in (a, b)",
                  _delay_sampler, delay_settings, n_trials=100_000,
                  transform=lambda p, a: a["t"], rate=None),
        BoundSpec("vel_drop_above_tailbound", "(0, nu), nu in (u, 0]",
                  "V stays above u for time t", "upper", "level", drop_bound, drop_valid,
                  "u in (-g/(1+gamma), 0), nu in (u, 0], 0 < sqrt(t)/(t((1+gamma)u+g)+u) < 1",
                  _survival(lambda p, a: (0.0, a["nu"], dict(v_lo=a["u"])),
                            lambda p, a: a["t"]), drop_settings, n_trials=20_000),
        BoundSpec("vel_increase_below_renewal", "(h, nu), nu in (-g/gamma, u)",
                  "V stays below u for time t", "upper", "shape",
                  lambda p, a: math.exp(-a["eps"] ** 2 * a["t"] / 2), rise_valid,
                  "eps in (0, g/gamma), nu in (-g/gamma, u), t > t0(h, eps)",
                  _survival(rise_make, lambda p, a: a["t"]), rise_settings, n_trials=100_000,
                  transform=lambda p, a: a["t"], rate=lambda p, a: a["eps"] ** 2 / 2),
        BoundSpec("vel_increase_below_renewal_explicit", "(h, nu), nu in (-g/gamma, u)",
                  "V stays below u for time t", "upper", "level", rise_bound, rise_valid,
                  "eps in (0, g/gamma), nu in (-g/gamma, u), t > t0(h, eps)",
                  _survival(rise_make, lambda p, a: a["t"]),
                  lambda p: rise_settings(p)[::2], n_trials=100_000),
        BoundSpec("velocity_tail_bounded_by_exponential", "(0, nu), nu > u > 0",
                  "V stays above u for time t", "upper", "level", fall_bound,
                  lambda p, a: a["u"] > 0 and a["nu"] > a["u"] and a["t"] >= 0,
                  "u > 0, nu > u, t >= 0",
                  _survival(fall_make, lambda p, a: a["t"]), fall_settings, n_trials=20_000),
    ]
    return specs


def get_spec(name: str) -> BoundSpec:
    for s in registry():
        if s.name == name:
            return s
    raise KeyError(f"unknown bound spec {name!r}")
