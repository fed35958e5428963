"""``inertdrift <command> --config FILE [--seed N] [--workers K] [--out DIR]``

Each command writes ``result.json`` (numbers only, byte-stable for a fixed
config), its data files, the plot-ready CSVs and a ``manifest.json`` holding
the config echo, library versions and wall time.  Failures leave an
``error.json`` record.  Exit status: 0 ok, 2 configuration error, 3 numeric
or abort-budget failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (fit_gap_tail, fit_velocity_tail, fluctuation_run, gamma_zero_oracle,
                        lln_run, product_form_tests, stationary_samples, tv_decay_curve)
from .bounds import derive_seed, registry, run_suite
from .config import COMMANDS, ConfigError, ExperimentConfig
from .integrator import StepConfig, shared_noise_pair, simulate, strong_errors, sup_distance
from .model import ModelParams, SystemState
from .renewal import AbortBudgetError, collect_cycles, cycle_iid_diagnostics, zeta_tail_check
from .rng import NoiseSource
from .stationary import (BinningSet, EmpiricalMeasure, estimate_pi,
                         measure_from_occupation, pilot_binning, time_average_stream,
                         tv_distance)

WORKERS_ENV = "INERTDRIFT_WORKERS"


def _plain(x):
    """Recursively convert numpy scalars/arrays and tuples for json."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _init(params: ModelParams, h0: float, v0) -> SystemState:
    return SystemState.initial(h0, params.renewal_v if v0 is None else v0)


# --------------------------------------------------------------- commands

def _cmd_simulate(cfg, out):
    a, p = cfg.arg, cfg.params
    tr = simulate(p, _init(p, a["h0"], a["v0"]), cfg.step, NoiseSource(cfg.seed), a["horizon"])
    tr.to_csv(out / "trajectory.csv")
    return {"n_states": len(tr), "final": asdict(tr.final), "stop": asdict(tr.stop_info),
            "min_h": float(tr.h.min()), "max_h": float(tr.h.max()),
            "min_v": float(tr.v.min()), "max_v": float(tr.v.max())}


def _cmd_cycles(cfg, out):
    a, p = cfg.arg, cfg.params
    batch = collect_cycles(p, a["n_cycles"], cfg.step.dt, NoiseSource(cfg.seed), a["t_cap"],
                           n_lanes=a["n_lanes"], workers=cfg.workers)
    batch.save(out / "cycles.csv")
    d = batch.durations
    res = {"n_cycles": batch.n_cycles, "mean_duration": float(d.mean()),
           "std_duration": float(d.std(ddof=1)) if d.size > 1 else None,
           "abort_fraction": batch.abort_fraction, "n_partial": batch.n_partial}
    if batch.n_cycles >= 1000:
        z = zeta_tail_check(batch, seed=cfg.seed)
        res["zeta_tail"] = z.as_dict()
        res["zeta_curve"] = np.column_stack([z.t_grid, z.log_surv])
        res["iid"] = cycle_iid_diagnostics(batch).as_dict()
    return res


def _pilot(cfg, nh, nv, n_cycles):
    return pilot_binning(cfg.params, cfg.step.dt, NoiseSource(derive_seed(cfg.seed, "pilot")),
                         n_cycles=n_cycles, nh=nh, nv=nv)


def _cmd_stationary(cfg, out):
    a, p = cfg.arg, cfg.params
    bulk = _pilot(cfg, a["nh"], a["nv"], a["pilot_cycles"])
    binset = BinningSet.default(p, bulk)
    batch = collect_cycles(p, a["n_cycles"], cfg.step.dt, NoiseSource(cfg.seed),
                           binset=binset, n_lanes=a["n_lanes"], workers=cfg.workers)
    pi_r = estimate_pi(batch)
    horizon = float(batch.durations.sum())
    occ = time_average_stream(p, _init(p, 0.0, None), cfg.step.dt,
                              NoiseSource(derive_seed(cfg.seed, "time-average")), horizon,
                              binset, burn_in=a["burn_in"])
    pi_t = measure_from_occupation(occ)
    pi_r.to_csv(out / "pi_renewal.csv")
    pi_t.to_csv(out / "pi_time.csv")
    return {"tv": tv_distance(pi_r, pi_t), "binning": binset.as_dict(),
            "n_cycles": batch.n_cycles, "matched_horizon": horizon,
            "renewal": {"mean_h": pi_r.mean("h"), "mean_v": pi_r.mean("v"),
                        "overflow_fraction": pi_r.meta.get("overflow_fraction")},
            "time_average": {"mean_h": pi_t.mean("h"), "mean_v": pi_t.mean("v"),
                             "overflow_fraction": pi_t.meta.get("overflow_fraction")}}


def _fit_tails(cfg, n):
    a, p = cfg.arg, cfg.params
    batch = collect_cycles(p, n, cfg.step.dt, NoiseSource(cfg.seed), n_lanes=a["n_lanes"],
                           workers=cfg.workers)
    q = (a["q_hi"], a["q_lo"])
    return (fit_velocity_tail(batch, p, q, a["min_effective"]),
            fit_gap_tail(batch, p, q, a["min_effective"]), batch)


def _cmd_tails(cfg, out):
    a = cfg.arg
    n = a["n_cycles"]
    fv, fg, batch = _fit_tails(cfg, n)
    escalated = False
    if a["escalate"] and "inconclusive" in (fv.verdict, fg.verdict):
        n *= 4
        fv, fg, batch = _fit_tails(cfg, n)
        escalated = True
    return {"n_cycles": batch.n_cycles, "escalated": escalated,
            "velocity": fv.as_dict(), "gap": fg.as_dict(),
            "velocity_curve": fv.curve(), "gap_curve": fg.curve()}


def _cmd_fluctuations(cfg, out):
    a, p = cfg.arg, cfg.params
    rep = fluctuation_run(p, cfg.step.dt, NoiseSource(cfg.seed), a["n_steps"],
                          _init(p, a["h0"], a["v0"]), a["per_decade"],
                          a["upper_slack"], a["lower_slack"])
    return {**rep.as_dict(), "rows": rep.rows()}


def _cmd_lln(cfg, out):
    a, p = cfg.arg, cfg.params
    seeds = [derive_seed(cfg.seed, "lln", i) for i in range(a["n_seeds"])]
    times = sorted({*a["checkpoints"], a["horizon"]})
    res = lln_run(p, cfg.step.dt, seeds, times, init=_init(p, a["h0"], a["v0"]))
    return {**res.as_dict(), "terminal_s_over_t": res.s_over_t[:, -1],
            "terminal_x_over_t": res.x_over_t[:, -1]}


def _cmd_ergodicity(cfg, out):
    a, p = cfg.arg, cfg.params
    bulk = _pilot(cfg, a["nh"], a["nv"], 500)
    batch = collect_cycles(p, a["pi_cycles"], cfg.step.dt, NoiseSource(cfg.seed),
                           binset=BinningSet.default(p, bulk), workers=cfg.workers)
    pi_hat = estimate_pi(batch)
    times = np.arange(1, int(round(a["t_max"] / a["t_step"])) + 1) * a["t_step"]
    fits = []
    for i, init in enumerate(a["inits"]):
        f = tv_decay_curve(p, init, times, a["n_chains"], bulk, pi_hat, cfg.step.dt,
                           NoiseSource(derive_seed(cfg.seed, "chains", i)))
        fits.append({"init": list(init), **f.as_dict(), "rows": f.rows()})
    return {"binning": asdict(bulk), "pi_cycles": batch.n_cycles, "decays": fits,
            "lambdas": [f["lambda_fit"] for f in fits]}


def _cmd_bounds(cfg, out):
    a = cfg.arg
    specs = registry()
    if a["specs"]:
        known = {s.name for s in specs}
        missing = sorted(set(a["specs"]) - known)
        if missing:
            raise ConfigError(f"unknown bound specs {missing}")
        specs = [s for s in specs if s.name in a["specs"]]
    rep = run_suite(cfg.params, cfg.seed, cfg.step.dt, a["trial_factor"], cfg.workers, specs)
    rep.to_json(out / "bounds.json")
    (out / "bounds_table.txt").write_text(rep.table() + "\n")
    return {"passed": rep.passed, "verdicts": rep.verdicts,
            "shape": [{"spec": r.spec, "abscissa": r.abscissa, "p_hat": r.p_hat}
                      for r in rep.shape]}


def _cmd_oracle(cfg, out):
    a, p = cfg.arg, cfg.params
    rep = gamma_zero_oracle(p, a["n_samples"], a["spacing"], cfg.step.dt,
                            NoiseSource(cfg.seed), a["burn_in"], a["bridge"])
    ctrl_p = ModelParams(a["control_gamma"], p.g)
    h, v = stationary_samples(ctrl_p, a["n_samples"], a["spacing"], cfg.step.dt,
                              NoiseSource(derive_seed(cfg.seed, "control")), a["burn_in"],
                              a["bridge"])
    ctrl = product_form_tests(h, v)
    return {"oracle": rep.as_dict(), "control": {"gamma": ctrl_p.gamma, **ctrl.as_dict()},
            "control_flags_non_product": not ctrl.product_form}


def _cmd_convergence(cfg, out):
    a, p = cfg.arg, cfg.params
    dts, errs = strong_errors(p, a["h0"], a["v0"], a["horizon"], a["dts"], a["n_paths"],
                              cfg.seed, a["ref_factor"])
    order = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    rows = []
    base = SystemState.initial(a["h0"], a["v0"])
    step = StepConfig(dt=cfg.step.dt)
    for i in range(a["n_seeds"]):
        noise = NoiseSource(derive_seed(cfg.seed, "continuity", i))
        for eps in a["perturbations"]:
            # a pure h shift just translates the path until contact, so shift v too
            pert = SystemState.initial(a["h0"] + eps, a["v0"] + eps)
            t1, t2 = shared_noise_pair(p, base, pert, step, noise, a["horizon"])
            rows.append((i, eps, sup_distance(t1, t2)))
    rows = np.array(rows)
    ratio = rows[:, 2] / rows[:, 1]
    per_seed = [float(ratio[rows[:, 0] == i].max() / ratio[rows[:, 0] == i].min())
                for i in range(a["n_seeds"])]
    return {"dts": dts, "errors": errs, "order": order, "continuity": rows,
            "gain_spread": per_seed, "max_gain_spread": max(per_seed)}


HANDLERS = {"simulate": _cmd_simulate, "cycles": _cmd_cycles, "stationary": _cmd_stationary,
            "tails": _cmd_tails, "fluctuations": _cmd_fluctuations, "lln": _cmd_lln,
            "ergodicity": _cmd_ergodicity, "bounds": _cmd_bounds, "oracle": _cmd_oracle,
            "convergence": _cmd_convergence}


# --------------------------------------------------------------- plot data

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, int, np.floating)) and
                        not isinstance(x, bool) else x for x in r])


def _marginals(meas: EmpiricalMeasure):
    m = meas.normalized()
    return m.mass.sum(axis=1), m.mass.sum(axis=0)


def emit_plot_data(out_dir) -> list:
    """Turn a command's artifacts into one tidy CSV per figure; returns the
    written paths."""
    out = Path(out_dir)
    src = out / "result.json"
    if not src.exists():
        raise FileNotFoundError(f"missing artifact {src}")
    res = json.loads(src.read_text())
    cmd = res["command"]
    r = res["result"]
    written = []

    def emit(name, header, rows):
        path = out / name
        _write_csv(path, header, rows)
        written.append(path)

    if cmd == "tails":
        for axis in ("velocity", "gap"):
            emit(f"plot_tail_{axis}.csv", ["y", "log_surv", "fit", "ci_lo", "ci_hi"],
                 r[f"{axis}_curve"])
    elif cmd == "ergodicity":
        for i, d in enumerate(r["decays"]):
            emit(f"plot_tv_decay_{i}.csv", ["t", "tv", "noise_floor", "in_fit"], d["rows"])
    elif cmd == "fluctuations":
        emit("plot_fluctuations.csv", ["t", "v_ratio", "h_ratio", "v_decade", "h_decade"],
             r["rows"])
    elif cmd == "cycles":
        if "zeta_curve" in r:
            emit("plot_zeta_survival.csv", ["sqrt_t", "log_surv"], r["zeta_curve"])
    elif cmd == "stationary":
        pr = EmpiricalMeasure.from_csv(out / "pi_renewal.csv")
        pt = EmpiricalMeasure.from_csv(out / "pi_time.csv")
        (hr, vr), (ht, vt) = _marginals(pr), _marginals(pt)
        rows = [("h", lo, hi, a, b) for lo, hi, a, b in
                zip(pr.h_edges[:-1], pr.h_edges[1:], hr, ht)]
        rows += [("v", lo, hi, a, b) for lo, hi, a, b in
                 zip(pr.v_edges[:-1], pr.v_edges[1:], vr, vt)]
        emit("plot_stationary_marginals.csv", ["axis", "lo", "hi", "renewal", "time_average"],
             rows)
    elif cmd == "lln":
        emit("plot_lln.csv", ["t", "mean_s_over_t", "var_s_over_t"],
             zip(r["times"], r["mean_s_over_t"], r["var_s_over_t"] or [math.nan] * len(r["times"])))
    elif cmd == "bounds":
        rows = [(s["spec"], z, p) for s in r["shape"] for z, p in zip(s["abscissa"], s["p_hat"])]
        emit("plot_bounds_shape.csv", ["spec", "abscissa", "p_hat"], rows)
    elif cmd == "convergence":
        emit("plot_strong_error.csv", ["dt", "mean_error"], zip(r["dts"], r["errors"]))
        emit("plot_continuity.csv", ["seed_index", "perturbation", "sup_distance"],
             r["continuity"])
    return written


# --------------------------------------------------------------- driver

def _versions():
    import numba
    import scipy
    return {"inertdrift": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__,
            "platform": platform.platform()}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: ExperimentConfig) -> dict:
    """Execute ``cfg`` and write its artifacts; returns the result dict."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    err = out / "error.json"
    if err.exists():
        err.unlink()
    t0 = time.perf_counter()
    started = datetime.now(timezone.utc).isoformat()
    result = HANDLERS[cfg.command](cfg, out)
    _dump(out / "result.json", {"command": cfg.command, "result": result})
    plots = emit_plot_data(out)
    files = sorted(p.name for p in out.iterdir()
                   if p.is_file() and p.name not in ("manifest.json", "error.json"))
    _dump(out / "manifest.json", {
        "command": cfg.command, "config": cfg.to_text(), "versions": _versions(),
        "started_utc": started, "wall_time_s": time.perf_counter() - t0,
        "files": {f: _sha(out / f) for f in files}, "plot_files": [p.name for p in plots]})
    return result


def _error(out_dir, code: str, exc: Exception, status: int) -> int:
    rec = {"status": status, "code": code, "type": type(exc).__name__, "message": str(exc)}
    print(json.dumps(rec), file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            _dump(Path(out_dir) / "error.json", rec)
        except OSError:
            pass
    return status


def build_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, args.command)
    else:
        cfg = ExperimentConfig.from_text("", args.command)
    kw = {}
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            kw["workers"] = int(env)
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    if args.workers is not None:
        kw["workers"] = args.workers
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["output_dir"] = args.out
    return cfg.replace(**kw) if kw else cfg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="inertdrift", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS + ("plot-data",))
    ap.add_argument("--config", help="INI file with [run], [model], [step] and a command section")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, help=f"worker processes (overrides ${WORKERS_ENV})")
    ap.add_argument("--out", help="output directory")
    args = ap.parse_args(argv)

    if args.command == "plot-data":
        if args.out is None:
            return _error(None, "config-error", ConfigError("plot-data needs --out"), 2)
        try:
            for p in emit_plot_data(args.out):
                print(p)
        except FileNotFoundError as e:
            return _error(args.out, "missing-artifact", e, 3)
        except ValueError as e:
            return _error(args.out, "empty-measure" if "empty-measure" in str(e)
                          else "numeric-error", e, 3)
        return 0

    try:
        cfg = build_config(args)
    except ConfigError as e:
        return _error(args.out, "config-error", e, 2)
    try:
        res = run(cfg)
    except ConfigError as e:
        return _error(cfg.output_dir, "config-error", e, 2)
    except AbortBudgetError as e:
        return _error(cfg.output_dir, "abort-budget", e, 3)
    except (ValueError, ArithmeticError, FileNotFoundError) as e:
        code = "empty-measure" if "empty-measure" in str(e) else "numeric-error"
        return _error(cfg.output_dir, code, e, 3)
    print(json.dumps({"command": cfg.command, "output_dir": cfg.output_dir,
                      "summary": _summary(cfg.command, res)}, sort_keys=True))
    return 0


def _summary(cmd, res):
    keys = {"simulate": ("n_states",), "cycles": ("n_cycles", "mean_duration"),
            "stationary": ("tv",), "tails": ("n_cycles", "escalated"),
            "fluctuations": ("passed",), "lln": ("mean_s_over_t",),
            "ergodicity": ("lambdas",), "bounds": ("passed",), "oracle": ("control_flags_non_product",),
            "convergence": ("order", "max_gain_spread")}[cmd]
    return _plain({k: res[k] for k in keys})


if __name__ == "__main__":
    sys.exit(main())
