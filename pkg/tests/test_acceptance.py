"""Desk-scale acceptance experiments, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers, whether or not pytest captures output.  The whole file takes about
ten minutes on one core; run it alone with ``pytest tests/test_acceptance.py -v``.
"""
import math
import time

import numpy as np
import pytest

from inertdrift import cli
from inertdrift.analytics import (fit_gap_tail, fit_velocity_tail, fluctuation_run,
                                  gamma_zero_oracle, lln_run, product_form_tests,
                                  stationary_samples, tv_decay_curve)
from inertdrift.bounds import run_suite
from inertdrift.integrator import (StepConfig, reflect_step_arrays, shared_noise_pair,
                                   simulate, sup_distance)
from inertdrift.model import ModelParams, SystemState, interior_hitting_time, interior_velocity
from inertdrift.renewal import collect_cycles, zeta_tail_check
from inertdrift.rng import NoiseSource
from inertdrift.stationary import (BinningSet, estimate_pi, measure_from_occupation,
                                   pilot_binning, time_average_stream, tv_distance)

pytestmark = pytest.mark.acceptance

P = ModelParams()
DT = 1e-3


@pytest.fixture
def say(capsys):
    """Print one verdict line past pytest's capture, then assert it."""
    def report(number, title, ok, detail, t0):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail} "
                  f"({time.perf_counter() - t0:.1f}s)")
        assert ok, f"criterion {number} ({title}): {detail}"
    return report


def test_01_skorohod_complementarity(say):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    n = 10**6
    # half the states start on the wall, where the projection is active most often
    h = rng.exponential(1.0, n) * rng.integers(0, 2, n)
    v = rng.normal(-0.5, 1.0, n).clip(-0.999, None)
    dB = rng.normal(0.0, math.sqrt(DT), n)
    hn, vn, dl = reflect_step_arrays(h, v, dB, DT, P)
    res_h = np.abs(hn - (h + v * DT - dB + dl)).max()
    res_v = np.abs(vn - (v - (P.gamma * v + P.g) * DT + dl)).max()
    ok = (bool((hn >= 0).all() and (dl >= 0).all()) and float(np.abs(dl * hn).max()) == 0.0
          and max(res_h, res_v) <= 1e-12 and time.perf_counter() - t0 < 10)
    say(1, "Skorohod step", ok, f"{n} steps, {int((dl > 0).sum())} in contact, "
        f"identity residual {max(res_h, res_v):.1e}", t0)


def test_02_interior_closed_form(say):
    t0 = time.perf_counter()
    v0 = 1.0
    ratios, spreads = [], []
    for gamma in (0.5, 1.0, 2.0):
        for g in (0.5, 1.0, 2.0):
            p = ModelParams(gamma, g)
            Ks = []
            for dt in (1e-2, 1e-3, 1e-4):
                tr = simulate(p, SystemState.initial(50.0, v0), StepConfig(dt=dt),
                              NoiseSource.silent(), 2.0)
                exact = np.array([interior_velocity(p, v0, t) for t in tr.t])
                Ks.append(np.abs(tr.v - exact).max() / dt)
            spreads.append(max(Ks) / min(Ks))
            # first-order Euler constant on v' = -gamma v - g
            ratios.append(Ks[-1] / ((v0 + g / gamma) * gamma / (2 * math.e)))
    comp = 0.0
    for gamma, g, a in ((0.5, 2.0, -3.0), (1.0, 1.0, -0.75), (3.0, 0.2, 0.0)):
        p = ModelParams(gamma, g)
        t = interior_hitting_time(p, v0, a)
        comp = max(comp, abs(interior_velocity(p, v0, t) - a))
    ok = max(spreads) < 1.02 and max(abs(r - 1) for r in ratios) < 2e-3 and comp <= 1e-12
    say(2, "interior dynamics", ok, f"K/K_theory in [{min(ratios):.4f}, {max(ratios):.4f}], "
        f"K spread over dt {max(spreads):.4f}, composition error {comp:.1e}", t0)


def test_03_law_of_large_numbers(say):
    t0 = time.perf_counter()
    res = lln_run(P, DT, list(range(100, 120)), [1e4, 1e5])
    s = res.s_over_t[:, -1]
    mean = float(s.mean())
    se = float(s.std(ddof=1) / math.sqrt(s.size))
    ok = abs(mean + 0.5) <= 0.02
    say(3, "LLN", ok, f"mean S_t/t = {mean:.5f} (target -0.5, tol 0.02), "
        f"seed sd {s.std(ddof=1):.4f}, se {se:.5f}", t0)


def test_04_renewal_reward_vs_time_average(say):
    t0 = time.perf_counter()
    bulk = pilot_binning(P, DT, NoiseSource(41), n_cycles=500, nh=200, nv=200)
    binset = BinningSet.default(P, bulk)
    batch = collect_cycles(P, 10_000, DT, NoiseSource(42), binset=binset)
    pi_r = estimate_pi(batch)
    horizon = float(batch.durations.sum())
    occ = time_average_stream(P, SystemState.initial(0.0, P.renewal_v), DT, NoiseSource(43),
                              horizon, binset, burn_in=100.0)
    tv = tv_distance(pi_r, measure_from_occupation(occ))
    say(4, "renewal vs time average", tv < 0.05,
        f"binned TV {tv:.4f} on 200x200, horizon {horizon:.0f}", t0)


def test_05_cycle_length_tail(say):
    t0 = time.perf_counter()
    z = zeta_tail_check(collect_cycles(P, 10_000, DT, NoiseSource(51)))
    say(5, "zeta tail", z.passed, f"c = {z.c:.3f} CI [{z.c_ci[0]:.3f}, {z.c_ci[1]:.3f}], "
        f"monotone {z.monotone}, concave {z.concave}", t0)


def test_06_tail_sandwiches(say):
    t0 = time.perf_counter()
    n = 100_000
    escalated = False
    while True:
        batch = collect_cycles(P, n, DT, NoiseSource(61))
        fv, fg = fit_velocity_tail(batch, P), fit_gap_tail(batch, P)
        if "inconclusive" not in (fv.verdict, fg.verdict) or escalated:
            break
        n, escalated = 4 * n, True
    ok = fv.verdict == "pass" and fg.verdict == "pass"
    say(6, "tail sandwiches", ok,
        f"{n} cycles{' (escalated)' if escalated else ''}; velocity {fv.slope:.3f} "
        f"[{fv.ci[0]:.3f}, {fv.ci[1]:.3f}] in {fv.bracket}; gap {fg.slope:.3f} "
        f"[{fg.ci[0]:.3f}, {fg.ci[1]:.3f}] in {fg.bracket}", t0)


def test_07_fluctuation_proxies(say):
    t0 = time.perf_counter()
    rep = fluctuation_run(P, DT, NoiseSource(71), 10**7)
    d = rep.as_dict()
    say(7, "fluctuation proxies", rep.passed,
        f"t = {d['t']:.0f}: v {d['v_ratio']:.3f}/{d['v_decade']:.3f} vs {rep.v_bracket[0]:.3f}"
        f"..{rep.v_bracket[1]:.3f}, h {d['h_ratio']:.3f}/{d['h_decade']:.3f} vs "
        f"{rep.h_bracket[0]:.3f}..{rep.h_bracket[1]:.3f}, checks {d['checks']}", t0)


def test_08_exponential_ergodicity(say):
    t0 = time.perf_counter()
    bulk = pilot_binning(P, DT, NoiseSource(81), n_cycles=500, nh=30, nv=30)
    pi_hat = estimate_pi(collect_cycles(P, 50_000, DT, NoiseSource(82),
                                        binset=BinningSet.default(P, bulk)))
    times = np.arange(1, 51) * 0.5
    fits = [tv_decay_curve(P, init, times, 10_000, bulk, pi_hat, DT, NoiseSource(83 + i))
            for i, init in enumerate([(5.0, 2.0), (3.0, -0.5)])]
    ok = all(0 < f.lambda_fit < 1 and f.r2 >= 0.9 for f in fits)
    say(8, "exponential ergodicity", ok, "; ".join(
        f"init {init}: lambda {f.lambda_fit:.3f}, r2 {f.r2:.3f}, {int(f.fit_mask.sum())} pts"
        for init, f in zip([(5.0, 2.0), (3.0, -0.5)], fits)), t0)


def test_09_bounds_suite(say):
    t0 = time.perf_counter()
    rep = run_suite(P, seed=1, dt=DT)
    bad = {k: v for k, v in rep.verdicts.items() if any(x != "pass" for x in v)}
    n_set = len(rep.level) + sum(len(r.abscissa) for r in rep.shape)
    say(9, "bounds suite", rep.passed, f"{len(rep.verdicts)} specs, {n_set} settings, "
        f"failing: {bad or 'none'}", t0)


def test_10_inviscid_oracle(say):
    t0 = time.perf_counter()
    rep = gamma_zero_oracle(ModelParams.inviscid(), 10_000, 5.0, DT, NoiseSource(101))
    h, v = stationary_samples(P, 10_000, 5.0, DT, NoiseSource(102))
    ctrl = product_form_tests(h, v)
    ok = rep.product_form and not ctrl.product_form
    say(10, "gamma = 0 oracle", ok,
        f"p-values gap {rep.ks_h_p:.3f}, velocity {rep.ks_v_p:.3f}, independence "
        f"{rep.indep_p:.3f}; gamma = 1 control p {ctrl.ks_h_p:.1e}/{ctrl.ks_v_p:.1e}/"
        f"{ctrl.indep_p:.1e}", t0)


def test_11_shared_noise_continuity(say):
    t0 = time.perf_counter()
    eps = (1e-6, 1e-5, 1e-4, 1e-3)
    base = SystemState.initial(0.5, -0.5)
    spreads = []
    for seed in range(10):
        gains = []
        for e in eps:
            a, b = shared_noise_pair(P, base, SystemState.initial(0.5 + e, -0.5 + e),
                                     StepConfig(dt=DT), NoiseSource(1100 + seed), 10.0)
            gains.append(sup_distance(a, b) / e)
        spreads.append(max(gains) / min(gains))
    say(11, "shared-noise continuity", max(spreads) <= 3.0,
        f"worst gain spread over 1e-6..1e-3 is {max(spreads):.4f} across 10 seeds", t0)


SMALL = {
    "simulate": "[simulate]\nhorizon = 5\n",
    "cycles": "[cycles]\nn_cycles = 2000\nn_lanes = 2\n",
    "stationary": "[stationary]\nn_cycles = 1000\nnh = 40\nnv = 40\n",
    "tails": "[tails]\nn_cycles = 5000\n",
    "fluctuations": "[fluctuations]\nn_steps = 1e6\n",
    "lln": "[lln]\nn_seeds = 3\nhorizon = 1000\ncheckpoints = 100\n",
    "ergodicity": "[ergodicity]\nn_chains = 2000\npi_cycles = 5000\nt_max = 10\nt_step = 1\n",
    "bounds": "[bounds]\nspecs = vel_escape_interval, gap_hits_zero_before_long\n",
    "oracle": "[model]\ngamma = 0\ngamma_zero_mode = true\n[oracle]\nn_samples = 2000\n",
    "convergence": "[convergence]\nn_paths = 10\nn_seeds = 2\n",
}


def test_12_determinism(say, tmp_path):
    t0 = time.perf_counter()
    diffs, n_files = [], 0
    for cmd, text in SMALL.items():
        cfg = tmp_path / f"{cmd}.ini"
        cfg.write_text(text)
        runs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / cmd
            assert cli.main([cmd, "--config", str(cfg), "--seed", "12", "--out", str(out)]) == 0
            runs.append(out)
        files = sorted(p.name for p in runs[0].iterdir() if p.name != "manifest.json")
        n_files += len(files)
        diffs += [f"{cmd}/{f}" for f in files
                  if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    say(12, "determinism", not diffs,
        f"{len(SMALL)} commands, {n_files} artifacts compared, differing: {diffs or 'none'}", t0)
