"""Euler-Maruyama integration with a per-step Skorohod projection.

The compiled loops live in ``_kernels``; this module wraps them in value
types, validates inputs, and implements predicate-driven stopping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels as K
from .model import ModelParams, SystemState
from .rng import NoiseSource

COLUMNS = ("t", "h", "v", "s", "x", "b", "l")
_CHUNK = 1 << 16


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-4
    max_steps: int = 10**10
    record_stride: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class StopInfo:
    reason: str            # "horizon", "predicate", "timeout" or "step_cap"
    t_cross: float         # interpolated crossing time (or stopping time)
    step: int              # absolute index of the first step where it held


@dataclass
class Trajectory:
    """Recorded path; ``data`` holds one row (t, h, v, s, x, b, l) per state."""

    params: ModelParams
    data: np.ndarray
    dt: float
    stop_info: StopInfo | None = None

    def __len__(self):
        return self.data.shape[0]

    def __getattr__(self, name):
        if name in COLUMNS:
            return self.data[:, COLUMNS.index(name)]
        raise AttributeError(name)

    def state(self, i: int) -> SystemState:
        return SystemState(*(float(u) for u in self.data[i]))

    @property
    def states(self) -> list[SystemState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> SystemState:
        return self.state(-1)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.data, fmt="%.17g", delimiter=",",
                   header=",".join(COLUMNS), comments="")

    @classmethod
    def from_csv(cls, path, params: ModelParams, dt: float) -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip()
        if header != ",".join(COLUMNS):
            raise ValueError(f"unexpected trajectory header {header!r}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(params, data, dt)


def _check_state(params: ModelParams, st: SystemState) -> None:
    st.validate(params)


def _start_step(st: SystemState, dt: float) -> int:
    """Absolute noise index of a state; states live on the grid t = k*dt."""
    k = int(round(st.t / dt))
    if abs(k * dt - st.t) > 1e-9 * max(1.0, abs(st.t)):
        raise ValueError(f"state time {st.t} is not on the dt={dt} grid")
    return k


def reflect_step(state: SystemState, params: ModelParams, dB: float, dt: float) -> SystemState:
    """One discrete Skorohod step driven by the increment ``dB``."""
    if not (math.isfinite(dB) and math.isfinite(dt)) or dt <= 0:
        raise ValueError("reflect_step needs finite dB and positive dt")
    if not all(math.isfinite(u) for u in (state.h, state.v, state.s, state.b, state.l)):
        raise ValueError("reflect_step got a non-finite state")
    h, v = state.h, state.v
    hs = h + v * dt - dB
    dl = -hs if hs < 0.0 else 0.0
    hn = hs + dl
    vn = v - (params.gamma * v + params.g) * dt + dl
    s = state.s + v * dt
    return SystemState(state.t + dt, hn, vn, s, s - hn, state.b + dB, state.l + dl)


def reflect_step_arrays(h, v, dB, dt, params: ModelParams):
    """Vectorized ``reflect_step`` on (h, v); returns (h_new, v_new, dL)."""
    h = np.asarray(h, float)
    v = np.asarray(v, float)
    dB = np.asarray(dB, float)
    hs = h + v * dt - dB
    dl = np.where(hs < 0.0, -hs, 0.0)
    hn = hs + dl
    vn = v - (params.gamma * v + params.g) * dt + dl
    return hn, vn, dl


def _run(params, st, k0, n, stride, dt, noise):
    seed, stream = noise.key
    return K.run_path(st.h, st.v, st.s, st.b, st.l, k0, n, stride, dt,
                      params.gamma, params.g, seed, stream, noise.scale)


def simulate(params: ModelParams, init: SystemState, cfg: StepConfig,
             noise: NoiseSource, horizon: float) -> Trajectory:
    """Path of ``ceil(horizon/dt)`` steps (capped by ``cfg.max_steps``)."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    _check_state(params, init)
    k0 = _start_step(init, cfg.dt)
    n = max(1, math.ceil(horizon / cfg.dt - 1e-9))
    reason = "horizon"
    if n > cfg.max_steps:
        n, reason = cfg.max_steps, "step_cap"
    data = _run(params, init, k0, n, cfg.record_stride, cfg.dt, noise)
    data[:, 0] += init.t - k0 * cfg.dt
    return Trajectory(params, data, cfg.dt, StopInfo(reason, float(data[-1, 0]), k0 + n))


class PathView:
    """Columns of a block of consecutive states, handed to predicates."""

    def __init__(self, data):
        self.data = data

    def __getattr__(self, name):
        if name in COLUMNS:
            return self.data[:, COLUMNS.index(name)]
        raise AttributeError(name)


@dataclass(frozen=True)
class Predicate:
    """Vectorized state predicate; ``variable``/``level`` enable interpolation
    of the crossing time between the bracketing steps."""

    fn: Callable[[PathView], np.ndarray]
    variable: str | None = None
    level: float | None = None
    name: str = "predicate"

    def __call__(self, view):
        return self.fn(view)


def v_at_most(level: float) -> Predicate:
    return Predicate(lambda p: p.v <= level, "v", level, f"v<={level}")


def v_at_least(level: float) -> Predicate:
    return Predicate(lambda p: p.v >= level, "v", level, f"v>={level}")


def h_at_least(level: float) -> Predicate:
    return Predicate(lambda p: p.h >= level, "h", level, f"h>={level}")


def contact() -> Predicate:
    # the projection clamps h to exactly 0 in contact steps
    return Predicate(lambda p: p.h <= 0.0, "h", 0.0, "contact")


def simulate_until(params: ModelParams, init: SystemState, cfg: StepConfig,
                   noise: NoiseSource, predicate, t_max: float) -> Trajectory:
    """Run until ``predicate`` first holds or ``t_max`` time units elapse.

    ``predicate`` maps a ``PathView`` of consecutive states to a boolean array.
    """
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    _check_state(params, init)
    dt = cfg.dt
    k0 = _start_step(init, dt)
    n_max = math.ceil(t_max / dt - 1e-9)
    cap_hit = n_max > cfg.max_steps
    n_max = min(n_max, cfg.max_steps)
    offset = init.t - k0 * dt
    stride = cfg.record_stride

    first = np.array([[init.t, init.h, init.v, init.s, init.x, init.b, init.l]])
    if np.asarray(predicate(PathView(first)))[0]:
        return Trajectory(params, first, dt, StopInfo("predicate", init.t, k0))

    kept = [first]
    st = init
    done = 0
    info = None
    while done < n_max:
        n = min(_CHUNK, n_max - done)
        blk = _run(params, st, k0 + done, n, 1, dt, noise)
        blk[:, 0] += offset
        hit = np.flatnonzero(np.asarray(predicate(PathView(blk[1:]))))
        if hit.size:
            j = int(hit[0]) + 1
            prev, new = blk[j - 1], blk[j]
            theta = 1.0
            var = getattr(predicate, "variable", None)
            if var is not None:
                c = COLUMNS.index(var)
                den = new[c] - prev[c]
                if den != 0.0:
                    theta = min(1.0, max(0.0, (predicate.level - prev[c]) / den))
            info = StopInfo("predicate", float(prev[0] + theta * dt), k0 + done + j)
            blk = blk[: j + 1]
        idx = np.arange(1, blk.shape[0])
        steps = done + idx
        sel = (steps % stride == 0) | (idx == blk.shape[0] - 1)
        kept.append(blk[1:][sel])
        done += blk.shape[0] - 1
        if info is not None:
            break
        st = SystemState(*(float(u) for u in blk[-1]))
    data = np.concatenate(kept)
    if info is None:
        info = StopInfo("step_cap" if cap_hit else "timeout", float(data[-1, 0]), k0 + done)
    return Trajectory(params, data, dt, info)


def shared_noise_pair(params: ModelParams, init1: SystemState, init2: SystemState,
                      cfg: StepConfig, noise: NoiseSource, horizon: float):
    """Two paths driven by the identical increment sequence."""
    return (simulate(params, init1, cfg, noise, horizon),
            simulate(params, init2, cfg, noise, horizon))


def sup_distance(tr1: Trajectory, tr2: Trajectory, columns=("h", "v")) -> float:
    """Largest componentwise gap between two equally sampled paths."""
    if tr1.data.shape != tr2.data.shape:
        raise ValueError("trajectories are sampled differently")
    idx = [COLUMNS.index(c) for c in columns]
    return float(np.max(np.abs(tr1.data[:, idx] - tr2.data[:, idx])))


def strong_errors(params: ModelParams, h0: float, v0: float, horizon: float,
                  dts, n_paths: int, seed: int = 0, ref_factor: int = 16):
    """Mean terminal discrepancy |(h, v)_dt - (h, v)_ref| for each ``dt``.

    All grids must nest inside the reference grid ``min(dts)/ref_factor``;
    coarse increments are sums of the fine ones, so every path sees the same
    Brownian motion.
    """
    dts = sorted(dts, reverse=True)
    dt_ref = dts[-1] / ref_factor
    ratios = [round(d / dt_ref) for d in dts]
    for d, r in zip(dts, ratios):
        if abs(r * dt_ref - d) > 1e-12 * d:
            raise ValueError("time steps must be integer multiples of the reference step")
    n_ref = round(horizon / dt_ref)
    if n_ref % max(ratios) != 0:
        raise ValueError("horizon must be a multiple of every time step")
    errs = np.zeros(len(dts))
    for p in range(n_paths):
        dB = NoiseSource(seed, p).increments(dt_ref, 0, n_ref)
        ref = _run_explicit(params, h0, v0, dB, dt_ref)
        for i, r in enumerate(ratios):
            coarse = dB.reshape(-1, r).sum(axis=1)
            errs[i] += np.max(np.abs(_run_explicit(params, h0, v0, coarse, dts[i]) - ref))
    return np.array(dts), errs / n_paths


def _run_explicit(params, h, v, dB, dt):
    return K.run_given(h, v, np.ascontiguousarray(dB), dt, params.gamma, params.g)
